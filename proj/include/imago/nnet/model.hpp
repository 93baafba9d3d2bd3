#pragma once

// The channel-compressing encoder-decoder and the per-subject calibration
// layer, plus checkpoint serialization (JSON header + raw little-endian
// 64-bit parameter blob).
//
// Architecture: two encoder blocks (C -> hidden1 -> hidden2) and two decoder
// blocks (hidden2 -> hidden1 -> C), each block holding two same-padded
// time-preserving convolutions followed by ReLU and dropout; the final
// convolution is linear (no activation, no dropout). Time length is
// preserved end to end, so output shape equals input shape.

#include <imago/common.hpp>
#include <imago/nnet/adam.hpp>
#include <imago/nnet/layers.hpp>
#include <imago/nnet/tensor.hpp>
#include <imago/rng.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace imago::nnet {

struct ModelConfig {
  Index channels = 16;
  Index hidden1 = 64;
  Index hidden2 = 32;
  Index kernel = 7;
  double dropout_p = 0.1;

  void validate() const {
    require(channels >= 1, "model: channels must be positive");
    require(hidden1 >= 1 && hidden2 >= 1, "model: hidden widths must be positive");
    require(kernel >= 1 && kernel % 2 == 1, "model: kernel size must be odd");
    require(dropout_p >= 0.0 && dropout_p < 1.0, "model: dropout_p must be in [0, 1)");
  }
};

class EncoderDecoder {
 public:
  struct ConvUnit {
    Conv1dLayer conv;
    bool relu = true;
    bool drop = true;
  };

  struct Workspace {
    std::vector<Tensor3> inputs;  ///< per unit, input to its convolution
    std::vector<Tensor3> preact;  ///< per unit, convolution output
    std::vector<Tensor3> masks;   ///< per unit, dropout mask (empty batch = identity)
  };

  EncoderDecoder() = default;

  EncoderDecoder(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const Index c = config_.channels, h1 = config_.hidden1, h2 = config_.hidden2;
    const Index k = config_.kernel;
    const auto add = [&](Index out, Index in, bool relu, bool drop) {
      ConvUnit u;
      u.conv = Conv1dLayer(out, in, k, rng);
      u.relu = relu;
      u.drop = drop;
      units_.push_back(std::move(u));
    };
    // Encoder blocks: C -> h1, h1 -> h2.
    add(h1, c, true, true);
    add(h1, h1, true, true);
    add(h2, h1, true, true);
    add(h2, h2, true, true);
    // Decoder blocks: h2 -> h1, h1 -> C; the last convolution is linear.
    add(h1, h2, true, true);
    add(h1, h1, true, true);
    add(c, h1, true, true);
    add(c, c, false, false);
    dropout_.p = config_.dropout_p;
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<ConvUnit>& units() const { return units_; }

  /// Forward pass. In train mode dropout masks are drawn from `rng`; the
  /// workspace (when given) caches everything backward() needs.
  Tensor3 forward(const Tensor3& x, bool train, Rng& rng, Workspace* ws = nullptr) const {
    x.validate();
    require(x.channels() == config_.channels, "model: input channel mismatch");
    require(x.time() >= config_.kernel, "model: input shorter than the kernel");
    if (ws != nullptr) {
      ws->inputs.assign(units_.size(), Tensor3());
      ws->preact.assign(units_.size(), Tensor3());
      ws->masks.assign(units_.size(), Tensor3());
    }
    Tensor3 cur = x;
    for (std::size_t u = 0; u < units_.size(); ++u) {
      const ConvUnit& unit = units_[u];
      if (ws != nullptr) ws->inputs[u] = cur;
      Tensor3 out = conv1d_forward(unit.conv, cur);
      if (ws != nullptr) ws->preact[u] = out;
      if (unit.relu)
        for (Matrix& m : out.values) m = m.cwiseMax(0.0);
      if (unit.drop && train && dropout_.p > 0.0) {
        Tensor3 masks;
        masks.values.reserve(out.values.size());
        for (Matrix& m : out.values) {
          Matrix dropped;
          masks.values.push_back(dropout_.forward_one(m, true, rng, &dropped));
          m = std::move(dropped);
        }
        if (ws != nullptr) ws->masks[u] = std::move(masks);
      }
      cur = std::move(out);
    }
    return cur;
  }

  /// Backpropagates dL/dy, accumulating parameter gradients, and returns
  /// dL/dx (needed when an upstream calibration layer is being trained).
  Tensor3 backward(const Workspace& ws, const Tensor3& dldy) {
    require(ws.inputs.size() == units_.size(), "model: workspace does not match");
    Tensor3 cur = dldy;
    for (std::size_t ui = units_.size(); ui-- > 0;) {
      ConvUnit& unit = units_[ui];
      const Tensor3& masks = ws.masks[ui];
      const Tensor3& pre = ws.preact[ui];
      const Tensor3& input = ws.inputs[ui];
      Tensor3 dx;
      dx.values.reserve(cur.values.size());
      for (std::size_t b = 0; b < cur.values.size(); ++b) {
        Matrix dy = cur.values[b];
        if (unit.drop && !masks.values.empty())
          dy = DropoutLayer::backward_one(masks.values[b], dy);
        if (unit.relu) dy = ReluLayer::backward_one(pre.values[b], dy);
        dx.values.push_back(unit.conv.backward_one(input.values[b], dy));
      }
      cur = std::move(dx);
    }
    return cur;
  }

  void zero_grad() {
    for (ConvUnit& u : units_) u.conv.zero_grad();
  }

  std::vector<ParamSlot> parameters() {
    std::vector<ParamSlot> slots;
    for (ConvUnit& u : units_) {
      for (std::size_t tap = 0; tap < u.conv.taps.size(); ++tap) {
        ParamSlot s;
        s.value = u.conv.taps[tap].data();
        s.grad = u.conv.tap_grad[tap].data();
        s.size = static_cast<std::size_t>(u.conv.taps[tap].size());
        slots.push_back(s);
      }
      ParamSlot b;
      b.value = u.conv.bias.data();
      b.grad = u.conv.bias_grad.data();
      b.size = static_cast<std::size_t>(u.conv.bias.size());
      slots.push_back(b);
    }
    return slots;
  }

 private:
  ModelConfig config_;
  std::vector<ConvUnit> units_;
  DropoutLayer dropout_;
};

/// Kernel-size-1 convolution mixing channels: y = mixing * x + bias, applied
/// per batch item. Initialized to the identity with zero bias so an
/// uncalibrated pass is a no-op.
struct CalibrationLayer {
  Matrix mixing;
  Vector bias;
  Matrix mixing_grad;
  Vector bias_grad;

  CalibrationLayer() = default;
  explicit CalibrationLayer(Index channels) {
    require(channels >= 1, "calibration: channels must be positive");
    mixing = Matrix::Identity(channels, channels);
    bias = Vector::Zero(channels);
    zero_grad();
  }

  Index channels() const { return mixing.rows(); }

  void validate() const {
    require(mixing.rows() == mixing.cols() && mixing.rows() >= 1,
            "calibration: mixing must be square");
    require(bias.size() == mixing.rows(), "calibration: bias length mismatch");
    require(mixing.allFinite() && bias.allFinite(), "calibration: parameters must be finite");
  }

  /// Zeroes gradients without reallocating (optimizer slots hold raw
  /// pointers into these buffers, so addresses must stay stable).
  void zero_grad() {
    if (mixing_grad.rows() != mixing.rows() || mixing_grad.cols() != mixing.cols())
      mixing_grad.resize(mixing.rows(), mixing.cols());
    mixing_grad.setZero();
    if (bias_grad.size() != bias.size()) bias_grad.resize(bias.size());
    bias_grad.setZero();
  }

  Tensor3 forward(const Tensor3& x) const {
    validate();
    require(x.channels() == channels(), "calibration: channel mismatch");
    Tensor3 y;
    y.values.reserve(x.values.size());
    for (const Matrix& m : x.values)
      y.values.push_back(mixing * m + bias.replicate(1, m.cols()));
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  Tensor3 backward(const Tensor3& x, const Tensor3& dldy) {
    Tensor3 dx;
    dx.values.reserve(x.values.size());
    for (std::size_t b = 0; b < x.values.size(); ++b) {
      mixing_grad.noalias() += dldy.values[b] * x.values[b].transpose();
      bias_grad += dldy.values[b].rowwise().sum();
      dx.values.push_back(mixing.transpose() * dldy.values[b]);
    }
    return dx;
  }

  std::vector<ParamSlot> parameters() {
    std::vector<ParamSlot> slots(2);
    slots[0] = {mixing.data(), mixing_grad.data(), static_cast<std::size_t>(mixing.size())};
    slots[1] = {bias.data(), bias_grad.data(), static_cast<std::size_t>(bias.size())};
    return slots;
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: [8-byte little-endian header length][JSON header][f64 blob].

namespace detail {

inline void append_le64(std::string* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_le64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

/// Writes the model checkpoint. Extra metadata fields (e.g. a config hash)
/// are merged into the JSON header under their own keys.
inline void save_checkpoint(const std::string& path, EncoderDecoder& model,
                            const nlohmann::json& extra = {}) {
  nlohmann::json header;
  header["format"] = "imago-checkpoint-v1";
  header["channels"] = model.config().channels;
  header["hidden1"] = model.config().hidden1;
  header["hidden2"] = model.config().hidden2;
  header["kernel"] = model.config().kernel;
  header["dropout_p"] = model.config().dropout_p;
  std::size_t n = 0;
  auto slots = model.parameters();
  for (const ParamSlot& s : slots) n += s.size;
  header["params"] = n;
  for (const auto& [key, value] : extra.items()) header[key] = value;

  const std::string head = header.dump();
  std::string out;
  detail::append_le64(&out, head.size());
  out += head;
  out.reserve(out.size() + n * sizeof(double));
  for (const ParamSlot& s : slots) {
    const char* bytes = reinterpret_cast<const char*>(s.value);
    out.append(bytes, s.size * sizeof(double));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "checkpoint: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "checkpoint: write failed: " + path);
}

/// Reads a checkpoint written by save_checkpoint; returns the model and the
/// JSON header.
inline std::pair<EncoderDecoder, nlohmann::json> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 8, "checkpoint: truncated header length");
  const std::uint64_t head_len = detail::read_le64(bytes.data());
  require(bytes.size() >= 8 + head_len, "checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(8, head_len));
  require(header.value("format", "") == std::string("imago-checkpoint-v1"),
          "checkpoint: unknown format");

  ModelConfig config;
  config.channels = header.at("channels").get<Index>();
  config.hidden1 = header.at("hidden1").get<Index>();
  config.hidden2 = header.at("hidden2").get<Index>();
  config.kernel = header.at("kernel").get<Index>();
  config.dropout_p = header.at("dropout_p").get<double>();
  Rng rng(0);  // placeholder init, immediately overwritten by the blob
  EncoderDecoder model(config, rng);

  const std::size_t expected = header.at("params").get<std::size_t>();
  require(bytes.size() == 8 + head_len + expected * sizeof(double),
          "checkpoint: parameter blob size mismatch");
  const char* blob = bytes.data() + 8 + head_len;
  std::size_t at = 0;
  for (const ParamSlot& s : model.parameters()) {
    std::memcpy(s.value, blob + at * sizeof(double), s.size * sizeof(double));
    at += s.size;
  }
  require(at == expected, "checkpoint: parameter count mismatch");
  return {std::move(model), std::move(header)};
}

}  // namespace imago::nnet
