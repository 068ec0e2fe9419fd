#include "mlkrig/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

namespace mlkrig {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'L', 'K', 'R', 'I', 'G', 'M', 'D'};

constexpr std::string_view kSchema =
    "theta:nu,rho,sigma2:f64;beta:vec;gamma:vec;gamma_W:vec;trend:d_loc,degree:u64,center,half_width:vec;"
    "locations:mat;responses:vec;leaf_min:u64;fixed_theta:u8;response:str;predictors:strs;"
    "transforms:map<str,{log:u8,zscore:u8,mean:f64,sd:f64}>";

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <class T>
  void raw(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void u64(std::uint64_t v) { raw(v); }
  void f64(double v) { raw(v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void mat(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  template <class T>
  T raw() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::uint64_t u64() { return raw<std::uint64_t>(); }
  double f64() { return raw<double>(); }
  std::uint64_t count() {
    const auto n = u64();
    if (n > (std::uint64_t{1} << 34)) throw ParseError("model file: implausible length field");
    return n;
  }
  std::string str() {
    std::string s(count(), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    check();
    return s;
  }
  Vector vec() {
    Vector v(static_cast<Index>(count()));
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    check();
    return v;
  }
  Matrix mat() {
    const auto rows = static_cast<Index>(count());
    const auto cols = static_cast<Index>(count());
    Matrix m(rows, cols);
    in_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    check();
    return m;
  }

 private:
  void check() {
    if (!in_) throw ParseError("model file: truncated");
  }
  std::istream& in_;
};

}  // namespace

std::uint64_t model_schema_hash() {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : kSchema) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_model(const std::string& path, const SavedModel& saved) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.raw(kModelFormatVersion);
  w.u64(model_schema_hash());
  const FittedModel& m = saved.model;
  w.f64(m.theta.nu);
  w.f64(m.theta.rho);
  w.f64(m.theta.sigma2);
  w.vec(m.beta);
  w.vec(m.gamma);
  w.vec(m.gamma_W);
  w.u64(static_cast<std::uint64_t>(m.trend.dimension()));
  w.u64(static_cast<std::uint64_t>(m.trend.degree()));
  w.vec(m.trend.center());
  w.vec(m.trend.half_width());
  w.mat(m.locations);
  w.vec(m.responses);
  w.u64(static_cast<std::uint64_t>(saved.leaf_min));
  w.raw(static_cast<std::uint8_t>(saved.fixed_theta));
  w.str(saved.response);
  w.u64(saved.predictors.size());
  for (const auto& p : saved.predictors) w.str(p);
  w.u64(saved.transforms.size());
  for (const auto& [name, t] : saved.transforms) {
    w.str(name);
    w.raw(static_cast<std::uint8_t>(t.log));
    w.raw(static_cast<std::uint8_t>(t.zscore));
    w.f64(t.mean);
    w.f64(t.sd);
  }
  if (!out) throw ParseError("write to '" + path + "' failed");
}

SavedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open model file '" + path + "'");
  Reader r(in);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError("'" + path + "' is not a model file");
  if (r.raw<std::uint32_t>() != kModelFormatVersion) throw ParseError("model file: unsupported format version");
  if (r.u64() != model_schema_hash()) throw ParseError("model file: schema hash mismatch");

  SavedModel saved;
  FittedModel& m = saved.model;
  m.theta.nu = r.f64();
  m.theta.rho = r.f64();
  m.theta.sigma2 = r.f64();
  m.beta = r.vec();
  m.gamma = r.vec();
  m.gamma_W = r.vec();
  const auto d_loc = static_cast<Index>(r.u64());
  const auto degree = static_cast<int>(r.u64());
  m.trend = TrendBasis(d_loc, degree);
  const Vector center = r.vec();
  const Vector half_width = r.vec();
  m.trend.set_rescaling(center, half_width);
  m.locations = r.mat();
  m.responses = r.vec();
  saved.leaf_min = static_cast<Index>(r.u64());
  saved.fixed_theta = r.raw<std::uint8_t>() != 0;
  saved.response = r.str();
  const auto n_pred = r.count();
  for (std::uint64_t i = 0; i < n_pred; ++i) saved.predictors.push_back(r.str());
  const auto n_tr = r.count();
  for (std::uint64_t i = 0; i < n_tr; ++i) {
    const std::string name = r.str();
    ColumnTransform t;
    t.log = r.raw<std::uint8_t>() != 0;
    t.zscore = r.raw<std::uint8_t>() != 0;
    t.mean = r.f64();
    t.sd = r.f64();
    saved.transforms[name] = t;
  }

  const Index n = m.locations.rows();
  if (m.locations.cols() != d_loc || m.responses.size() != n || m.gamma.size() != n ||
      m.beta.size() != m.trend.size() || m.gamma_W.size() != n - m.trend.size())
    throw ParseError("model file: inconsistent field sizes");
  m.theta.validate();
  const Matrix x = build_design_matrix(m.trend, m.locations);
  m.basis = std::make_shared<const MultilevelBasis>(build_multilevel_basis(x, build_kdtree(m.locations, saved.leaf_min)));
  return saved;
}

}  // namespace mlkrig
