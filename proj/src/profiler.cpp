#include "spanet/profiler.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "spanet/attention.hpp"
#include "spanet/dft.hpp"
#include "spanet/error.hpp"
#include "spanet/rng.hpp"

namespace spanet {

namespace {

void check_basis(std::size_t n, const SpectralBasis& basis, const char* what) {
  if (basis.size() != n) {
    throw DimensionMismatch(std::string(what) + ": support is " + std::to_string(n) +
                            " wide, basis has " + std::to_string(basis.size()) + " vectors");
  }
}

std::vector<double> diagonal_against(const Matrix& cu, const SpectralBasis& basis) {
  const std::size_t n = basis.size();
  std::vector<double> phi(n, 0.0);
  const Matrix& u = basis.vectors;
  for (std::size_t a = 0; a < n; ++a) {
    const auto ua = u.row(a);
    const auto ca = cu.row(a);
    for (std::size_t k = 0; k < n; ++k) phi[k] += ua[k] * ca[k];
  }
  return phi;
}

Matrix sparse_times_dense(const SparseMatrix& c, const Matrix& u) {
  Matrix out(c.rows(), u.cols());
  for (std::size_t a = 0; a < c.rows(); ++a) {
    auto dst = out.row(a);
    const auto idx = c.row_indices(a);
    const auto val = c.row_values(a);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto src = u.row(idx[j]);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += val[j] * src[k];
    }
  }
  return out;
}

TrialProfile run_trial(const CampaignOptions& opts, const SpectralBasis& basis, Rng rng) {
  const std::size_t n = opts.patch;
  TrialProfile t;
  t.lambda = basis.eigenvalues;
  if (opts.kernel) {
    const KernelSpec k = opts.force_identity ? KernelSpec::identity(*opts.kernel)
                                             : KernelSpec::random(*opts.kernel, rng);
    t.phi = frequency_response(assemble_support(k, n, n).matrix, basis);
  } else {
    Matrix x(kAttentionInputDim, n * n);
    for (double& v : x.values()) v = rng.normal();
    const double scale = 1.0 / std::sqrt(static_cast<double>(kAttentionInputDim));
    const AttentionParams p =
        random_attention_params(kAttentionInputDim, kAttentionProbeHeadDim, rng, scale);
    const Matrix e =
        attention_matrix(project_tokens(x, p.query), project_tokens(x, p.key));
    t.phi = frequency_response(e, basis);
  }
  return t;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw IoError(path.string() + ": expected header '" + header + "'");
  }
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != columns) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

template <class T>
T parse_integer(const std::string& s, const std::filesystem::path& path) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(path.string() + ": bad integer '" + s + "'");
  }
  return v;
}

double parse_field(const std::string& s, const std::filesystem::path& path) {
  try {
    return parse_double(s);
  } catch (const IoError&) {
    throw IoError(path.string() + ": bad number '" + s + "'");
  }
}

}  // namespace

std::vector<double> frequency_response(const Matrix& support, const SpectralBasis& basis) {
  if (support.rows() != support.cols()) {
    throw DimensionMismatch("frequency response needs a square support, got " +
                            std::to_string(support.rows()) + "x" + std::to_string(support.cols()));
  }
  check_basis(support.rows(), basis, "frequency response");
  return diagonal_against(support * basis.vectors, basis);
}

std::vector<double> frequency_response(const SparseMatrix& support, const SpectralBasis& basis) {
  if (support.rows() != support.cols()) {
    throw DimensionMismatch("frequency response needs a square support");
  }
  check_basis(support.rows(), basis, "frequency response");
  return diagonal_against(sparse_times_dense(support, basis.vectors), basis);
}

std::vector<BinStat> aggregate_profile(const std::vector<TrialProfile>& trials, std::size_t bins) {
  std::vector<std::vector<double>> members(bins);
  for (const auto& t : trials) {
    for (std::size_t i = 0; i < t.lambda.size(); ++i) {
      const double pos = std::clamp(t.lambda[i], 0.0, 2.0) / 2.0 * static_cast<double>(bins);
      const auto b = std::min(bins - 1, static_cast<std::size_t>(pos));
      members[b].push_back(std::abs(t.phi[i]));
    }
  }
  std::vector<BinStat> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    auto& s = out[b];
    s.lo = 2.0 * static_cast<double>(b) / static_cast<double>(bins);
    s.hi = 2.0 * static_cast<double>(b + 1) / static_cast<double>(bins);
    s.count = members[b].size();
    if (s.count == 0) continue;
    double sum = 0.0;
    for (double v : members[b]) sum += v;
    s.mean_abs_phi = sum / static_cast<double>(s.count);
    double sq = 0.0;
    for (double v : members[b]) sq += (v - s.mean_abs_phi) * (v - s.mean_abs_phi);
    s.std_abs_phi = std::sqrt(sq / static_cast<double>(s.count));
  }
  return out;
}

double band_mean(const std::vector<BinStat>& bins, double lo, double hi) {
  constexpr double slack = 1e-12;
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& b : bins) {
    if (b.count == 0 || b.lo < lo - slack || b.hi > hi + slack) continue;
    sum += b.mean_abs_phi;
    ++used;
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

double band_ratio(const FrequencyProfile& p, double high_lo, double high_hi, double low_lo,
                  double low_hi) {
  const double low = band_mean(p.aggregate, low_lo, low_hi);
  if (low == 0.0) return 0.0;
  return band_mean(p.aggregate, high_lo, high_hi) / low;
}

FrequencyProfile simulate_campaign(const CampaignOptions& opts) {
  if (opts.trials == 0) throw InvalidConfig("trials must be at least 1");
  if (opts.patch < 2) throw InvalidConfig("patch must be at least 2");
  if (opts.kernel && (*opts.kernel < 1 || *opts.kernel % 2 == 0)) {
    throw InvalidConfig("kernel size must be odd and positive, got " +
                        std::to_string(*opts.kernel));
  }
  if (!opts.kernel && opts.graph != GraphKind::complete) {
    throw InvalidConfig("attention campaigns run on the complete graph");
  }
  if (opts.graph == GraphKind::grid && *opts.kernel == 1) {
    throw InvalidConfig("grid(1) has no edges; use kernel >= 3");
  }
  const std::size_t n = opts.patch;
  const PatchGraph g = opts.graph == GraphKind::grid ? PatchGraph::grid(n, n, *opts.kernel)
                                                     : PatchGraph::complete(n, n);
  const Matrix lap = normalized_laplacian(g);
  const SpectralBasis basis = eigendecompose(lap);

  FrequencyProfile p;
  p.graph = opts.graph;
  p.kernel = opts.kernel ? std::to_string(*opts.kernel) : "attention";
  p.seed = opts.seed;
  p.min_eigenvalue = basis.eigenvalues.front();
  p.max_eigenvalue = basis.eigenvalues.back();
  p.basis_diagnostics = diagnose(lap, basis);
  p.trials.resize(opts.trials);

  const Rng trial_root = Rng(opts.seed).split("trial");
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < opts.trials; i = next++) {
      p.trials[i] = run_trial(opts, basis, trial_root.split(static_cast<std::uint64_t>(i)));
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, opts.trials);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  p.aggregate = aggregate_profile(p.trials);
  return p;
}

DecompositionCheck spectral_decomposition_check(const Matrix& support,
                                                std::span<const double> x,
                                                const SpectralBasis& basis) {
  check_basis(support.rows(), basis, "decomposition check");
  if (x.size() != support.cols()) {
    throw DimensionMismatch("decomposition check: signal length " + std::to_string(x.size()) +
                            " vs support width " + std::to_string(support.cols()));
  }
  const Matrix& u = basis.vectors;
  const Matrix spectral = u.transposed() * (support * u);
  const std::size_t n = basis.size();
  DecompositionCheck out;
  double off = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) off += spectral(i, j) * spectral(i, j);
    }
  }
  out.off_diagonal_mass = std::sqrt(off);
  std::vector<double> coeffs = gft(basis, x);
  for (std::size_t k = 0; k < n; ++k) coeffs[k] *= spectral(k, k);
  const std::vector<double> filtered = igft(basis, coeffs);
  const std::vector<double> direct = support * x;
  out.residual = max_abs_diff(direct, filtered);
  return out;
}

DecompositionCheck spectral_decomposition_check(const KernelSpec& kernel,
                                                std::span<const double> x,
                                                const SpectralBasis& basis, std::size_t height,
                                                std::size_t width) {
  return spectral_decomposition_check(assemble_support(kernel, height, width).matrix.to_dense(),
                                      x, basis);
}

RlaCurve relative_log_amplitude(const FeatureMap& x) {
  if (x.height() != x.width()) {
    throw NonSquareInput("relative log amplitude needs a square map, got " + x.shape_string());
  }
  const std::size_t n = x.height();
  const std::size_t rings = n / 2 + 1;
  constexpr double floor = 1e-30;
  RlaCurve curve;
  curve.radius_norm.resize(rings);
  curve.rel_log_amp.assign(rings, 0.0);
  const double half = std::max<double>(1.0, static_cast<double>(n / 2));
  for (std::size_t r = 0; r < rings; ++r) curve.radius_norm[r] = static_cast<double>(r) / half;

  // Ring membership of each bin after moving DC to the centre.
  std::vector<std::size_t> ring_of(n * n, rings);
  std::vector<std::size_t> ring_size(rings, 0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      const double fu = u <= n / 2 ? static_cast<double>(u) : static_cast<double>(u) - n;
      const double fv = v <= n / 2 ? static_cast<double>(v) : static_cast<double>(v) - n;
      const auto r = static_cast<std::size_t>(std::lround(std::hypot(fu, fv)));
      if (r < rings) {
        ring_of[u * n + v] = r;
        ++ring_size[r];
      }
    }
  }

  std::vector<double> acc(rings, 0.0);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const ComplexMap spec = dft2(x.channel(c), n, n);
    double dc = std::abs(spec.data[0]);
    double off_dc = 0.0;
    for (std::size_t i = 1; i < spec.data.size(); ++i) off_dc = std::max(off_dc, std::abs(spec.data[i]));
    if (off_dc <= 1e-12 * std::max(1.0, dc)) continue;
    std::vector<double> ring_sum(rings, 0.0);
    for (std::size_t i = 0; i < spec.data.size(); ++i) {
      if (ring_of[i] < rings) ring_sum[ring_of[i]] += std::log(std::max(std::abs(spec.data[i]), floor));
    }
    for (std::size_t r = 0; r < rings; ++r) acc[r] += ring_sum[r] / static_cast<double>(ring_size[r]);
    ++curve.channel_count;
  }
  if (curve.channel_count == 0) {
    curve.degenerate = true;
    return curve;
  }
  for (std::size_t r = 0; r < rings; ++r) {
    acc[r] /= static_cast<double>(curve.channel_count);
  }
  for (std::size_t r = 0; r < rings; ++r) curve.rel_log_amp[r] = acc[r] - acc[0];
  return curve;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("bad number '" + s + "'");
  return v;
}

namespace {
constexpr const char* kProfileHeader = "lambda,phi,trial,graph,kernel,seed";
constexpr const char* kAggregateHeader = "bin_lo,bin_hi,mean_abs_phi,std_abs_phi,count";
constexpr const char* kRlaHeader = "radius_norm,rel_log_amp,channel_count";
}  // namespace

void write_profile_csv(const FrequencyProfile& p, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kProfileHeader << '\n';
  const std::string graph = to_string(p.graph);
  const std::string tail = "," + graph + "," + p.kernel + "," + std::to_string(p.seed) + "\n";
  for (std::size_t t = 0; t < p.trials.size(); ++t) {
    const auto& tr = p.trials[t];
    for (std::size_t i = 0; i < tr.lambda.size(); ++i) {
      out << format_double(tr.lambda[i]) << ',' << format_double(tr.phi[i]) << ',' << t << tail;
    }
  }
  finish(out, path);
}

FrequencyProfile read_profile_csv(const std::filesystem::path& path) {
  FrequencyProfile p;
  for (const auto& row : read_csv(path, kProfileHeader)) {
    const auto trial = parse_integer<std::size_t>(row[2], path);
    if (trial > p.trials.size()) throw IoError(path.string() + ": trial indices not contiguous");
    if (trial == p.trials.size()) p.trials.emplace_back();
    if (row[3] == "grid") {
      p.graph = GraphKind::grid;
    } else if (row[3] == "complete") {
      p.graph = GraphKind::complete;
    } else {
      throw IoError(path.string() + ": unknown graph '" + row[3] + "'");
    }
    p.kernel = row[4];
    p.seed = parse_integer<std::uint64_t>(row[5], path);
    p.trials[trial].lambda.push_back(parse_field(row[0], path));
    p.trials[trial].phi.push_back(parse_field(row[1], path));
  }
  p.aggregate = aggregate_profile(p.trials);
  return p;
}

void write_aggregate_csv(const std::vector<BinStat>& bins, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kAggregateHeader << '\n';
  for (const auto& b : bins) {
    out << format_double(b.lo) << ',' << format_double(b.hi) << ','
        << format_double(b.mean_abs_phi) << ',' << format_double(b.std_abs_phi) << ','
        << b.count << '\n';
  }
  finish(out, path);
}

std::vector<BinStat> read_aggregate_csv(const std::filesystem::path& path) {
  std::vector<BinStat> bins;
  for (const auto& row : read_csv(path, kAggregateHeader)) {
    bins.push_back({parse_field(row[0], path), parse_field(row[1], path),
                    parse_field(row[2], path), parse_field(row[3], path),
                    parse_integer<std::size_t>(row[4], path)});
  }
  return bins;
}

void write_rla_csv(const RlaCurve& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kRlaHeader << '\n';
  for (std::size_t r = 0; r < curve.radius_norm.size(); ++r) {
    out << format_double(curve.radius_norm[r]) << ',' << format_double(curve.rel_log_amp[r])
        << ',' << curve.channel_count << '\n';
  }
  finish(out, path);
}

RlaCurve read_rla_csv(const std::filesystem::path& path) {
  RlaCurve c;
  for (const auto& row : read_csv(path, kRlaHeader)) {
    c.radius_norm.push_back(parse_field(row[0], path));
    c.rel_log_amp.push_back(parse_field(row[1], path));
    c.channel_count = parse_integer<std::size_t>(row[2], path);
  }
  c.degenerate = c.channel_count == 0;
  return c;
}

}  // namespace spanet
