#pragma once

#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ulab/io.hpp"
#include "ulab/rng.hpp"
#include "ulab/tensor.hpp"

namespace ulab::nn {

enum class LayerKind { Conv, ChannelNorm, Relu, AvgPool, Flatten, Linear };

struct LayerDesc {
    LayerKind kind;
    int kernel = 0;   // Conv
    int in_ch = 0;    // Conv
    int out_ch = 0;   // Conv
    int in_dim = 0;   // Linear
    int out_dim = 0;  // Linear

    static LayerDesc conv(int kernel, int in_ch, int out_ch) {
        return {LayerKind::Conv, kernel, in_ch, out_ch, 0, 0};
    }
    static LayerDesc channel_norm() { return {LayerKind::ChannelNorm, 0, 0, 0, 0, 0}; }
    static LayerDesc relu() { return {LayerKind::Relu, 0, 0, 0, 0, 0}; }
    static LayerDesc avg_pool() { return {LayerKind::AvgPool, 0, 0, 0, 0, 0}; }
    static LayerDesc flatten() { return {LayerKind::Flatten, 0, 0, 0, 0, 0}; }
    static LayerDesc linear(int in_dim, int out_dim) {
        return {LayerKind::Linear, 0, 0, 0, in_dim, out_dim};
    }

    std::size_t param_count() const {
        switch (kind) {
            case LayerKind::Conv:
                return std::size_t(out_ch) * in_ch * kernel * kernel + out_ch;
            case LayerKind::Linear:
                return std::size_t(out_dim) * in_dim + out_dim;
            default:
                return 0;
        }
    }

    std::size_t fan_in() const {
        switch (kind) {
            case LayerKind::Conv:
                return std::size_t(in_ch) * kernel * kernel;
            case LayerKind::Linear:
                return std::size_t(in_dim);
            default:
                return 0;
        }
    }

    std::string to_string() const {
        switch (kind) {
            case LayerKind::Conv:
                return "conv(" + std::to_string(kernel) + "," + std::to_string(in_ch) + "," +
                       std::to_string(out_ch) + ")";
            case LayerKind::ChannelNorm:
                return "channel-norm";
            case LayerKind::Relu:
                return "relu";
            case LayerKind::AvgPool:
                return "avgpool";
            case LayerKind::Flatten:
                return "flatten";
            case LayerKind::Linear:
                return "linear(" + std::to_string(in_dim) + "," + std::to_string(out_dim) + ")";
        }
        return "?";
    }
};

// Shape of one sample flowing through the network: channels x height x width,
// or a flat width after flatten (height = width = 0 marks flat).
struct FeatureShape {
    int channels = 0, height = 0, width = 0;
    bool flat = false;
    std::size_t count() const {
        return flat ? std::size_t(channels) : std::size_t(channels) * height * width;
    }
    bool operator==(const FeatureShape&) const = default;
};

struct NetworkSpec {
    std::vector<LayerDesc> layers;
    int class_count = 0;
    FeatureShape input; // declared input shape (channels, height, width)

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }

    // Applies the layer-shape recurrence; throws on any incompatibility.
    std::vector<FeatureShape> shape_trace() const {
        std::vector<FeatureShape> trace;
        trace.reserve(layers.size() + 1);
        FeatureShape s = input;
        trace.push_back(s);
        for (const auto& l : layers) {
            switch (l.kind) {
                case LayerKind::Conv: {
                    require(!s.flat, ErrorKind::InputShape, "conv on flat features");
                    require(s.channels == l.in_ch, ErrorKind::InputShape,
                            "conv expects " + std::to_string(l.in_ch) + " channels, got " +
                                std::to_string(s.channels));
                    require(s.height >= l.kernel && s.width >= l.kernel, ErrorKind::InputShape,
                            "conv kernel larger than feature map");
                    s.channels = l.out_ch; // same-padding keeps spatial size
                    break;
                }
                case LayerKind::ChannelNorm:
                case LayerKind::Relu:
                    break;
                case LayerKind::AvgPool: {
                    require(!s.flat, ErrorKind::InputShape, "pool on flat features");
                    require(s.height >= 2 && s.width >= 2, ErrorKind::InputShape,
                            "pool on degenerate feature map");
                    s.height /= 2;
                    s.width /= 2;
                    break;
                }
                case LayerKind::Flatten: {
                    require(!s.flat, ErrorKind::InputShape, "flatten twice");
                    s = FeatureShape{int(s.count()), 0, 0, true};
                    break;
                }
                case LayerKind::Linear: {
                    require(s.flat, ErrorKind::InputShape, "linear needs flat features");
                    require(s.channels == l.in_dim, ErrorKind::InputShape,
                            "linear expects " + std::to_string(l.in_dim) + " inputs, got " +
                                std::to_string(s.channels));
                    s.channels = l.out_dim;
                    break;
                }
            }
            trace.push_back(s);
        }
        return trace;
    }

    void validate() const {
        auto trace = shape_trace();
        if (class_count > 0) { // class_count == 0 marks a headless feature extractor
            const FeatureShape& out = trace.back();
            require(out.flat && out.channels == class_count, ErrorKind::InputShape,
                    "network output does not match class count");
        }
    }

    // The same network with its trailing classifier (linear stack) removed;
    // used as a feature embedder.
    NetworkSpec feature_extractor() const {
        NetworkSpec e = *this;
        while (!e.layers.empty() && e.layers.back().kind == LayerKind::Linear)
            e.layers.pop_back();
        e.class_count = 0;
        return e;
    }

    std::size_t feature_dim() const {
        auto fx = feature_extractor();
        return fx.shape_trace().back().count();
    }

    std::string to_string() const {
        std::ostringstream os;
        os << "in:" << input.channels << "x" << input.height << "x" << input.width << ";";
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (i) os << ";";
            os << layers[i].to_string();
        }
        os << ";classes:" << class_count;
        return os.str();
    }
};

// The ConvNet family used throughout: `depth` blocks of
// conv3x3 -> channel-norm -> relu -> avgpool2, then flatten + linear head.
inline NetworkSpec convnet_spec(int in_channels, int height, int width, int classes,
                                int net_width = 16, int depth = 3) {
    NetworkSpec s;
    s.input = FeatureShape{in_channels, height, width};
    s.class_count = classes;
    int ch = in_channels, h = height, w = width;
    for (int d = 0; d < depth; ++d) {
        s.layers.push_back(LayerDesc::conv(3, ch, net_width));
        s.layers.push_back(LayerDesc::channel_norm());
        s.layers.push_back(LayerDesc::relu());
        s.layers.push_back(LayerDesc::avg_pool());
        ch = net_width;
        h /= 2;
        w /= 2;
    }
    s.layers.push_back(LayerDesc::flatten());
    s.layers.push_back(LayerDesc::linear(ch * h * w, classes));
    s.validate();
    return s;
}

struct ParamVector {
    std::vector<double> values;
    struct Segment {
        std::size_t offset = 0, length = 0;
    };
    std::vector<Segment> segments; // one per layer, zero-length for parameter-free layers

    std::size_t size() const { return values.size(); }
    double* seg_ptr(std::size_t layer) { return values.data() + segments[layer].offset; }
    const double* seg_ptr(std::size_t layer) const { return values.data() + segments[layer].offset; }

    static ParamVector zeros_like(const NetworkSpec& spec) {
        ParamVector p;
        std::size_t off = 0;
        for (const auto& l : spec.layers) {
            p.segments.push_back({off, l.param_count()});
            off += l.param_count();
        }
        p.values.assign(off, 0.0);
        return p;
    }

    bool same_layout(const ParamVector& o) const {
        if (values.size() != o.values.size() || segments.size() != o.segments.size()) return false;
        for (std::size_t i = 0; i < segments.size(); ++i)
            if (segments[i].offset != o.segments[i].offset ||
                segments[i].length != o.segments[i].length)
                return false;
        return true;
    }
};

struct Model {
    NetworkSpec spec;
    ParamVector params;
};

// Uniform +-1/sqrt(fan-in) per layer, both weights and biases, seeded.
inline Model make_model(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m{spec, ParamVector::zeros_like(spec)};
    Rng rng(mix_seed(seed, 0x1417));
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        if (l.param_count() == 0) continue;
        const double bound = 1.0 / std::sqrt(double(l.fan_in()));
        double* p = m.params.seg_ptr(li);
        for (std::size_t i = 0; i < l.param_count(); ++i) p[i] = rng.uniform(-bound, bound);
    }
    return m;
}

// --- checkpoint files: flat little-endian f64 params + text sidecar ---

inline void save_params(const std::string& path, const ParamVector& p) {
    auto os = io::open_out(path);
    io::put_f64_block(os, p.values);
    require(os.good(), ErrorKind::Io, "write failed: " + path);
}

inline void save_checkpoint(const std::string& path, const Model& m, std::uint64_t seed) {
    save_params(path, m.params);
    auto meta = io::open_out(path + ".meta", /*binary=*/false);
    meta << "format = ulab-checkpoint-v1\n";
    meta << "spec = " << m.spec.to_string() << "\n";
    meta << "seed = " << seed << "\n";
    meta << "params = " << m.params.size() << "\n";
    meta << "digest = " << io::hex64(io::fnv1a(std::span<const double>(m.params.values))) << "\n";
}

NetworkSpec parse_spec_string(const std::string& text); // defined below

inline std::map<std::string, std::string> read_sidecar(const std::string& path) {
    auto is = io::open_in(path, /*binary=*/false);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline Model load_checkpoint(const std::string& path) {
    auto kv = read_sidecar(path + ".meta");
    require(kv.count("spec"), ErrorKind::Format, "checkpoint sidecar missing spec");
    Model m;
    m.spec = parse_spec_string(kv["spec"]);
    m.params = ParamVector::zeros_like(m.spec);
    auto is = io::open_in(path);
    io::get_f64_block(is, m.params.values);
    is.peek();
    require(is.eof(), ErrorKind::Format, "checkpoint larger than spec implies");
    return m;
}

inline NetworkSpec parse_spec_string_impl(const std::string& text) {
    NetworkSpec spec;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ';')) {
        if (tok.rfind("in:", 0) == 0) {
            int c, h, w;
            if (std::sscanf(tok.c_str(), "in:%dx%dx%d", &c, &h, &w) != 3)
                fail(ErrorKind::Format, "bad input shape: " + tok);
            spec.input = FeatureShape{c, h, w};
        } else if (tok.rfind("classes:", 0) == 0) {
            spec.class_count = std::stoi(tok.substr(8));
        } else if (tok.rfind("conv(", 0) == 0) {
            int k, i, o;
            if (std::sscanf(tok.c_str(), "conv(%d,%d,%d)", &k, &i, &o) != 3)
                fail(ErrorKind::Format, "bad conv layer: " + tok);
            spec.layers.push_back(LayerDesc::conv(k, i, o));
        } else if (tok == "channel-norm") {
            spec.layers.push_back(LayerDesc::channel_norm());
        } else if (tok == "relu") {
            spec.layers.push_back(LayerDesc::relu());
        } else if (tok == "avgpool") {
            spec.layers.push_back(LayerDesc::avg_pool());
        } else if (tok == "flatten") {
            spec.layers.push_back(LayerDesc::flatten());
        } else if (tok.rfind("linear(", 0) == 0) {
            int i, o;
            if (std::sscanf(tok.c_str(), "linear(%d,%d)", &i, &o) != 2)
                fail(ErrorKind::Format, "bad linear layer: " + tok);
            spec.layers.push_back(LayerDesc::linear(i, o));
        } else if (!tok.empty()) {
            fail(ErrorKind::Format, "unknown layer token: " + tok);
        }
    }
    return spec;
}

inline NetworkSpec parse_spec_string(const std::string& text) {
    NetworkSpec spec = parse_spec_string_impl(text);
    if (spec.class_count > 0) spec.validate();
    return spec;
}

} // namespace ulab::nn
