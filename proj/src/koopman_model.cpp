#include "koopmhe/koopman_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "koopmhe/log.hpp"

namespace koopmhe {

void KoopmanModel::validate() const {
  require(n_x > 0 && n_u > 0 && n_l >= 0, ErrorCode::kInputShape, "model dimensions invalid");
  const int g = n_g();
  require(A.rows() == g && A.cols() == g, ErrorCode::kInputShape, "A must be n_g x n_g");
  require(B.rows() == g && B.cols() == n_u, ErrorCode::kInputShape, "B must be n_g x n_u");
  require(C == reconstruction_matrix(n_x, g), ErrorCode::kInputShape, "C must be [I 0]");
  require(D.rows() == n_y() && D.cols() == g && D == build_D(selector_matrix(measured, n_x), g),
          ErrorCode::kInputShape, "D must equal Cbar C");
  if (n_l > 0) {
    require(lifting_net.input_dim() == n_x && lifting_net.output_dim() == n_l,
            ErrorCode::kInputShape, "lifting network must map n_x to n_l");
  } else {
    require(lifting_net.empty(), ErrorCode::kInputShape, "n_l = 0 model has a lifting network");
  }
  if (has_noise_net()) {
    require(noise_net.input_dim() == g && noise_net.output_dim() == g, ErrorCode::kInputShape,
            "noise network must map n_g to n_g");
  }
  require(scaler.state_dim() == n_x && scaler.input_dim() == n_u, ErrorCode::kInputShape,
          "scaler dimensions do not match the model");
  scaler.validate();
  require(sigma_max > 0.0, ErrorCode::kInputShape, "sigma_max must be positive");
}

bool KoopmanModel::operator==(const KoopmanModel& o) const {
  const auto same = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return n_x == o.n_x && n_u == o.n_u && n_l == o.n_l && measured == o.measured &&
         same(A, o.A) && same(B, o.B) && same(C, o.C) && same(D, o.D) &&
         lifting_net == o.lifting_net && noise_net == o.noise_net && scaler == o.scaler &&
         sigma_max == o.sigma_max && metadata == o.metadata;
}

Eigen::MatrixXd selector_matrix(const std::vector<int>& indices, int n) {
  require(!indices.empty(), ErrorCode::kConfiguration, "measurement selector is empty");
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(indices.size()), n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] >= 0 && indices[r] < n, ErrorCode::kConfiguration,
            "measurement index " + std::to_string(indices[r]) + " out of range");
    s(static_cast<Eigen::Index>(r), indices[r]) = 1.0;
  }
  return s;
}

Eigen::MatrixXd reconstruction_matrix(int n_x, int n_g) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n_x, n_g);
  c.leftCols(n_x).setIdentity();
  return c;
}

Eigen::MatrixXd build_D(const Eigen::MatrixXd& selector, int n_g) {
  const Eigen::Index n_x = selector.cols();
  require(n_x <= n_g && selector.rows() >= 1, ErrorCode::kConfiguration,
          "selector shape incompatible with the lifted dimension");
  for (Eigen::Index r = 0; r < selector.rows(); ++r) {
    int ones = 0;
    for (Eigen::Index c = 0; c < n_x; ++c) {
      const double v = selector(r, c);
      require(v == 0.0 || v == 1.0, ErrorCode::kConfiguration,
              "selector entries must be 0 or 1");
      ones += v == 1.0;
    }
    require(ones == 1, ErrorCode::kConfiguration,
            "selector row " + std::to_string(r) + " must have exactly one unit entry");
  }
  return selector * reconstruction_matrix(static_cast<int>(n_x), n_g);
}

KoopmanModel make_model(const ModelShape& shape, const Scaler& scaler, std::uint64_t seed) {
  require(shape.n_x > 0 && shape.n_u > 0 && shape.n_l >= 0, ErrorCode::kConfiguration,
          "model dimensions must be positive");
  const Rng rng(seed);
  KoopmanModel m;
  m.n_x = shape.n_x;
  m.n_u = shape.n_u;
  m.n_l = shape.n_l;
  m.measured = shape.measured;
  const int g = m.n_g();
  m.A = Eigen::MatrixXd::Identity(g, g);
  m.B = Eigen::MatrixXd::Zero(g, m.n_u);
  m.C = reconstruction_matrix(m.n_x, g);
  m.D = build_D(selector_matrix(m.measured, m.n_x), g);
  if (m.n_l > 0) {
    std::vector<int> dims{m.n_x};
    dims.insert(dims.end(), shape.lifting_hidden.begin(), shape.lifting_hidden.end());
    dims.push_back(m.n_l);
    m.lifting_net = init_mlp(dims, rng.stream("lifting").seed(), shape.activation);
  }
  std::vector<int> ndims{g};
  ndims.insert(ndims.end(), shape.noise_hidden.begin(), shape.noise_hidden.end());
  ndims.push_back(g);
  m.noise_net = init_mlp(ndims, rng.stream("noise").seed(), shape.activation);
  m.scaler = scaler;
  m.validate();
  return m;
}

Eigen::VectorXd lift(const KoopmanModel& m, const Eigen::VectorXd& x, bool already_scaled) {
  require(x.size() == m.n_x, ErrorCode::kInputShape, "lift: state has wrong length");
  require(x.allFinite(), ErrorCode::kInputShape, "lift: state is not finite");
  const Eigen::VectorXd xs = already_scaled ? x : Eigen::VectorXd(m.scaler.scale_states(x));
  Eigen::VectorXd z(m.n_g());
  z.head(m.n_x) = xs;
  if (m.n_l > 0) {
    z.tail(m.n_l) = mlp_eval(m.lifting_net, xs);
    require(z.allFinite(), ErrorCode::kModelCorrupt, "lifting network produced non-finite output");
  }
  return z;
}

Eigen::MatrixXd lift_batch(const KoopmanModel& m, const Eigen::MatrixXd& xs) {
  require(xs.rows() == m.n_x, ErrorCode::kInputShape, "lift: states have wrong row count");
  Eigen::MatrixXd z(m.n_g(), xs.cols());
  z.topRows(m.n_x) = xs;
  if (m.n_l > 0) z.bottomRows(m.n_l) = mlp_forward_batch(m.lifting_net, xs);
  require(z.allFinite(), ErrorCode::kModelCorrupt, "lifting produced non-finite output");
  return z;
}

Eigen::VectorXd reconstruct_scaled(const KoopmanModel& m, const Eigen::VectorXd& z) {
  require(z.size() == m.n_g(), ErrorCode::kInputShape, "reconstruct: lifted state has wrong length");
  return z.head(m.n_x);
}

Eigen::VectorXd reconstruct_unscaled(const KoopmanModel& m, const Eigen::VectorXd& z) {
  return m.scaler.unscale_states(reconstruct_scaled(m, z));
}

Eigen::VectorXd noise_std(const KoopmanModel& m, const Eigen::VectorXd& z, int* clamped) {
  require(m.has_noise_net(), ErrorCode::kContract, "model has no noise network");
  require(z.size() == m.n_g(), ErrorCode::kInputShape, "noise_std: lifted state has wrong length");
  const Eigen::VectorXd out = mlp_eval(m.noise_net, z);
  const double cap = std::log(m.sigma_max);
  Eigen::VectorXd sigma(out.size());
  int n_clamped = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (!(out[i] <= cap)) {  // also catches NaN
      sigma[i] = m.sigma_max;
      ++n_clamped;
    } else {
      sigma[i] = std::exp(out[i]);
    }
  }
  if (n_clamped > 0) {
    log_warning("noise std capped at " + format_double(m.sigma_max) + " in " +
                std::to_string(n_clamped) + " component(s)");
  }
  if (clamped) *clamped = n_clamped;
  return sigma;
}

RolloutResult rollout(const KoopmanModel& m, const Eigen::VectorXd& z0,
                      const Eigen::MatrixXd& inputs, const Eigen::VectorXd& mu) {
  require(z0.size() == m.n_g() && mu.size() == m.n_g(), ErrorCode::kInputShape,
          "rollout: z0 and mu must have length n_g");
  require(inputs.rows() == m.n_u && inputs.cols() >= 1, ErrorCode::kInputShape,
          "rollout: inputs must be n_u x H with H >= 1");
  const Eigen::Index h = inputs.cols();
  RolloutResult r;
  r.z.resize(m.n_g(), h + 1);
  r.z.col(0) = z0;
  for (Eigen::Index j = 0; j < h; ++j) {
    r.z.col(j + 1) = m.A * r.z.col(j) + m.B * inputs.col(j) + mu;
  }
  r.x = r.z.topRows(m.n_x);
  return r;
}

// ---------------------------------------------------------------------------
// Binary format: "KOOPMHE1" magic, u32 version, payload, u32 CRC-32 of all
// preceding bytes. Integers are little-endian u32/u64, reals IEEE-754 f64.

namespace {

constexpr char kMagic[8] = {'K', 'O', 'O', 'P', 'M', 'H', 'E', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void matrix(const Eigen::MatrixXd& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  void mlp(const Mlp& net) {
    u32(static_cast<std::uint32_t>(net.activation()));
    u32(static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
      matrix(l.weight);
      matrix(l.bias);
    }
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin)
      : data_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    require(pos_ + n <= data_.size(), ErrorCode::kLoad, origin_ + ": unexpected end of model file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd matrix() {
    const std::uint32_t r = u32();
    const std::uint32_t c = u32();
    need(static_cast<std::size_t>(r) * c * 8);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
  Mlp mlp() {
    const std::uint32_t act = u32();
    require(act <= static_cast<std::uint32_t>(Activation::kIdentity), ErrorCode::kLoad,
            origin_ + ": unknown activation code");
    const std::uint32_t n = u32();
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < n; ++i) {
      Eigen::MatrixXd w = matrix();
      Eigen::MatrixXd b = matrix();
      require(b.cols() == 1 || b.size() == 0, ErrorCode::kLoad, origin_ + ": bias is not a vector");
      layers.push_back({std::move(w), Eigen::VectorXd(b.reshaped())});
    }
    return Mlp(std::move(layers), static_cast<Activation>(act));
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(p), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_model(const KoopmanModel& m) {
  m.validate();
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.n_x));
  w.u32(static_cast<std::uint32_t>(m.n_u));
  w.u32(static_cast<std::uint32_t>(m.n_l));
  w.u32(static_cast<std::uint32_t>(m.measured.size()));
  for (int i : m.measured) w.u32(static_cast<std::uint32_t>(i));
  w.f64(m.sigma_max);
  w.matrix(m.A);
  w.matrix(m.B);
  w.matrix(m.C);
  w.matrix(m.D);
  w.mlp(m.lifting_net);
  w.mlp(m.noise_net);
  w.matrix(m.scaler.state_mean);
  w.matrix(m.scaler.state_std);
  w.matrix(m.scaler.input_mean);
  w.matrix(m.scaler.input_std);
  w.u32(static_cast<std::uint32_t>(m.metadata.size()));
  for (const auto& [k, v] : m.metadata) {
    w.str(k);
    w.str(v);
  }
  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

KoopmanModel deserialize_model(const std::string& bytes, const std::string& origin) {
  require(bytes.size() >= sizeof(kMagic) + 8, ErrorCode::kLoad, origin + ": model file too short");
  require(std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0, ErrorCode::kLoad,
          origin + ": not a model file");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes, origin);
  tail.skip(body);
  const std::uint32_t stored = tail.u32();
  require(stored == crc_of(bytes.data(), body), ErrorCode::kLoad,
          origin + ": checksum mismatch (file truncated or corrupted)");

  Reader r(bytes, origin);
  r.skip(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  require(version == kFormatVersion, ErrorCode::kLoad,
          origin + ": unsupported model format version " + std::to_string(version));
  KoopmanModel m;
  m.n_x = static_cast<int>(r.u32());
  m.n_u = static_cast<int>(r.u32());
  m.n_l = static_cast<int>(r.u32());
  const std::uint32_t n_y = r.u32();
  for (std::uint32_t i = 0; i < n_y; ++i) m.measured.push_back(static_cast<int>(r.u32()));
  m.sigma_max = r.f64();
  m.A = r.matrix();
  m.B = r.matrix();
  m.C = r.matrix();
  m.D = r.matrix();
  m.lifting_net = r.mlp();
  m.noise_net = r.mlp();
  m.scaler.state_mean = r.matrix().reshaped();
  m.scaler.state_std = r.matrix().reshaped();
  m.scaler.input_mean = r.matrix().reshaped();
  m.scaler.input_std = r.matrix().reshaped();
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    m.metadata[k] = r.str();
  }
  require(r.pos() == body, ErrorCode::kLoad, origin + ": trailing bytes in model file");
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kLoad, origin + ": inconsistent model: " + e.what());
  }
  return m;
}

void save_model(const KoopmanModel& m, const std::string& path) {
  const std::string bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing '" + path + "'");
}

KoopmanModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kLoad, "cannot open model file '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, path);
}

namespace {

void dump_matrix(std::ostringstream& out, const std::string& name, const Eigen::MatrixXd& m) {
  out << name << " " << m.rows() << "x" << m.cols() << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << " ";
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << " " << format_double(m(r, c));
    out << "\n";
  }
}

void dump_mlp(std::ostringstream& out, const std::string& name, const Mlp& net) {
  out << name << " activation=" << to_string(net.activation()) << " dims=";
  const auto dims = net.layer_dims();
  for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? "," : "") << dims[i];
  out << "\n";
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    dump_matrix(out, name + ".layer" + std::to_string(i) + ".weight", net.layers()[i].weight);
    dump_matrix(out, name + ".layer" + std::to_string(i) + ".bias", net.layers()[i].bias);
  }
}

}  // namespace

std::string export_readable(const KoopmanModel& m) {
  std::ostringstream out;
  out << "format_version " << kFormatVersion << "\n";
  out << "n_x " << m.n_x << "\nn_u " << m.n_u << "\nn_l " << m.n_l << "\nn_g " << m.n_g()
      << "\nn_y " << m.n_y() << "\n";
  out << "measured";
  for (int i : m.measured) out << " " << i;
  out << "\nsigma_max " << format_double(m.sigma_max) << "\n";
  for (const auto& [k, v] : m.metadata) out << "meta " << k << " = " << v << "\n";
  dump_matrix(out, "A", m.A);
  dump_matrix(out, "B", m.B);
  dump_matrix(out, "C", m.C);
  dump_matrix(out, "D", m.D);
  dump_mlp(out, "lifting_net", m.lifting_net);
  dump_mlp(out, "noise_net", m.noise_net);
  dump_matrix(out, "scaler.state_mean", m.scaler.state_mean.transpose());
  dump_matrix(out, "scaler.state_std", m.scaler.state_std.transpose());
  dump_matrix(out, "scaler.input_mean", m.scaler.input_mean.transpose());
  dump_matrix(out, "scaler.input_std", m.scaler.input_std.transpose());
  return out.str();
}

}  // namespace koopmhe
