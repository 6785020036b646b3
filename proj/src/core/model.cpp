#include "model.hpp"

#include <cmath>
#include <cstring>

#include "binio.hpp"

namespace apr {

std::size_t ExtractorParams::input_dim() const {
    require(!layers.empty(), ErrorKind::Contract, "extractor has no layers");
    return layers.front().weight.rows();
}

std::size_t ExtractorParams::feature_dim() const {
    require(!layers.empty(), ErrorKind::Contract, "extractor has no layers");
    return layers.back().weight.cols();
}

ExtractorParams ExtractorParams::mlp(const std::vector<std::size_t> &widths, const std::vector<Activation> &acts,
                                     Rng &rng) {
    require(widths.size() >= 2, ErrorKind::Config, "extractor needs at least an input and an output width");
    require(acts.size() == widths.size() - 1, ErrorKind::Config, "one activation per layer required");
    ExtractorParams p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const auto in = widths[l], out = widths[l + 1];
        require(in > 0 && out > 0, ErrorKind::Config, "layer widths must be positive");
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in)));
        DenseLayer layer{Tensor({in, out}), Tensor({out}), acts[l]};
        for (auto &w : layer.weight.data()) w = dist(rng);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

ClassifierHead ClassifierHead::create(std::size_t classes, std::size_t d, HeadMode mode, double scale,
                                      double init_std, Rng &rng) {
    require(classes > 0 && d > 0, ErrorKind::Config, "head needs classes and a feature width");
    require(scale > 0.0, ErrorKind::Config, "head scale must be positive");
    ClassifierHead h;
    h.weight = Tensor({classes, d});
    h.mode = mode;
    h.scale = scale;
    std::normal_distribution<double> dist(0.0, init_std);
    for (auto &w : h.weight.data()) w = dist(rng);
    return h;
}

void ClassifierHead::add_classes(std::size_t n_new, double init_std, Rng &rng) {
    require(n_new > 0, ErrorKind::Contract, "add_classes with zero classes");
    const auto d = feature_dim();
    std::normal_distribution<double> dist(0.0, init_std);
    auto values = weight.storage();
    for (std::size_t i = 0; i < n_new * d; ++i) values.push_back(dist(rng));
    old_classes = classes();
    weight = Tensor({old_classes + n_new, d}, std::move(values));
}

std::vector<std::size_t> ClassifierHead::split_columns(Split split) const {
    std::size_t lo = 0, hi = classes();
    if (split == Split::OldOnly) hi = old_classes;
    if (split == Split::NewOnly) lo = old_classes;
    require(lo < hi, ErrorKind::Contract,
            split == Split::OldOnly ? "old_only split on a head without old classes"
                                    : "new_only split on a head without new classes");
    std::vector<std::size_t> cols;
    for (auto c = lo; c < hi; ++c) cols.push_back(c);
    return cols;
}

ModelState snapshot(const ModelState &state) {
    ModelState out = state;
    out.frozen_previous = state.current;
    return out;
}

BoundExtractor bind(ad::Tape &tape, const ExtractorParams &params, bool trainable) {
    BoundExtractor f;
    for (const auto &l : params.layers) {
        f.weights.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
        f.biases.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
        f.activations.push_back(l.activation);
    }
    return f;
}

BoundHead bind(ad::Tape &tape, const ClassifierHead &head, bool trainable) {
    BoundHead g;
    g.weight = trainable ? tape.leaf(head.weight) : tape.constant(head.weight);
    g.mode = head.mode;
    g.scale = head.scale;
    for (std::size_t c = 0; c < head.classes(); ++c) (c < head.old_classes ? g.old_cols : g.new_cols).push_back(c);
    return g;
}

namespace {

ad::Var activate(ad::Var v, Activation a) {
    switch (a) {
        case Activation::Relu:
            return ad::relu(v);
        case Activation::Tanh:
            return ad::tanh(v);
        case Activation::Identity:
            break;
    }
    return v;
}

void activate_inplace(Tensor &t, Activation a) {
    if (a == Activation::Relu)
        for (auto &v : t.data()) v = v > 0.0 ? v : 0.0;
    else if (a == Activation::Tanh)
        for (auto &v : t.data()) v = std::tanh(v);
}

void normalize_rows_inplace(Tensor &t) {
    const auto r = t.rows(), c = t.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += t[i * c + j] * t[i * c + j];
        const double n = std::sqrt(s);
        for (std::size_t j = 0; j < c; ++j) t[i * c + j] = n < ad::kNormalizeEps ? 0.0 : t[i * c + j] / n;
    }
}

}  // namespace

ad::Var extract(const BoundExtractor &f, ad::Var x) {
    require(!f.weights.empty(), ErrorKind::Contract, "extractor has no layers");
    require(x.value().rank() == 2 && x.value().cols() == f.weights.front().value().rows(), ErrorKind::Dimension,
            "extract: input " + shape_string(x.shape()) + " does not match first layer width " +
                std::to_string(f.weights.front().value().rows()));
    ad::Var h = x;
    for (std::size_t l = 0; l < f.weights.size(); ++l)
        h = activate(ad::add(ad::matmul(h, f.weights[l]), f.biases[l]), f.activations[l]);
    return h;
}

ad::Var logits(const BoundHead &g, ad::Var features, Split split) {
    std::vector<std::size_t> cols;
    if (split == Split::All || split == Split::OldOnly) cols.insert(cols.end(), g.old_cols.begin(), g.old_cols.end());
    if (split == Split::All || split == Split::NewOnly) cols.insert(cols.end(), g.new_cols.begin(), g.new_cols.end());
    require(!cols.empty(), ErrorKind::Contract, "logit split references classes absent from the head");
    require(features.value().cols() == g.weight.value().cols(), ErrorKind::Dimension,
            "logits: feature width does not match head");
    ad::Var out;
    if (g.mode == HeadMode::Cosine)
        out = ad::scale(ad::matmul_nt(ad::normalize_rows(features), ad::normalize_rows(g.weight)), g.scale);
    else
        out = ad::matmul_nt(features, g.weight);
    if (split == Split::All) return out;
    return ad::select_cols(out, std::move(cols));
}

Tensor extract(const ExtractorParams &params, const Tensor &x) {
    require(!params.layers.empty(), ErrorKind::Contract, "extractor has no layers");
    require(x.rank() == 2 && x.cols() == params.input_dim(), ErrorKind::Dimension,
            "extract: input " + shape_string(x.shape()) + " does not match first layer width " +
                std::to_string(params.input_dim()));
    Tensor h = x;
    for (const auto &l : params.layers) {
        Tensor z({h.rows(), l.weight.cols()});
        z.mat().noalias() = h.mat() * l.weight.mat();
        const auto c = l.bias.size();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += l.bias[i % c];
        activate_inplace(z, l.activation);
        require(z.all_finite(), ErrorKind::Numeric, "non-finite features in extract");
        h = std::move(z);
    }
    return h;
}

Tensor logits(const ClassifierHead &head, const Tensor &features, Split split) {
    const auto cols = head.split_columns(split);
    require(features.rank() == 2 && features.cols() == head.feature_dim(), ErrorKind::Dimension,
            "logits: feature width does not match head");
    Tensor all({features.rows(), head.classes()});
    if (head.mode == HeadMode::Cosine) {
        Tensor fn = features, wn = head.weight;
        normalize_rows_inplace(fn);
        normalize_rows_inplace(wn);
        all.mat().noalias() = fn.mat() * wn.mat().transpose();
        for (auto &v : all.data()) v *= head.scale;
    } else {
        all.mat().noalias() = features.mat() * head.weight.mat().transpose();
    }
    if (split == Split::All) return all;
    Tensor out({features.rows(), cols.size()});
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out.at(i, j) = all.at(i, cols[j]);
    return out;
}

std::vector<Tensor *> parameters(Network &net) {
    std::vector<Tensor *> out;
    for (auto &l : net.extractor.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&net.head.weight);
    return out;
}

std::vector<const Tensor *> parameters(const Network &net) {
    std::vector<const Tensor *> out;
    for (const auto &l : net.extractor.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&net.head.weight);
    return out;
}

std::uint64_t checksum(const Network &net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void *p, std::size_t n) {
        const auto *b = static_cast<const unsigned char *>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto *t : parameters(net)) mix(t->storage().data(), t->size() * sizeof(double));
    const auto mode = static_cast<std::uint8_t>(net.head.mode);
    mix(&mode, 1);
    mix(&net.head.scale, sizeof(double));
    mix(&net.head.old_classes, sizeof(std::size_t));
    return h;
}

namespace {

constexpr std::string_view kModelMagic = "APRM";
constexpr std::uint32_t kModelVersion = 1;

void put_tensor(binio::Writer &w, const Tensor &t) {
    for (double v : t.data()) w.f64(v);
}

Tensor get_tensor(binio::Reader &r, Shape shape) {
    const auto n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto &x : v) x = r.f64();
    return Tensor(std::move(shape), std::move(v));
}

void put_network(binio::Writer &w, const Network &net) {
    w.u32(static_cast<std::uint32_t>(net.extractor.layers.size()));
    for (const auto &l : net.extractor.layers) {
        w.u8(static_cast<std::uint8_t>(l.activation));
        w.u32(static_cast<std::uint32_t>(l.weight.rows()));
        w.u32(static_cast<std::uint32_t>(l.weight.cols()));
        put_tensor(w, l.weight);
        put_tensor(w, l.bias);
    }
    w.u8(static_cast<std::uint8_t>(net.head.mode));
    w.f64(net.head.scale);
    w.u32(static_cast<std::uint32_t>(net.head.classes()));
    w.u32(static_cast<std::uint32_t>(net.head.old_classes));
    w.u32(static_cast<std::uint32_t>(net.head.feature_dim()));
    put_tensor(w, net.head.weight);
}

Network get_network(binio::Reader &r) {
    Network net;
    const auto n_layers = r.u32();
    require(n_layers > 0 && n_layers < 1024, ErrorKind::Decode, "implausible layer count");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const auto act = r.u8();
        require(act <= 2, ErrorKind::Decode, "unknown activation tag");
        const std::size_t in = r.u32(), out = r.u32();
        require(in > 0 && out > 0, ErrorKind::Decode, "zero layer width");
        DenseLayer l;
        l.activation = static_cast<Activation>(act);
        l.weight = get_tensor(r, {in, out});
        l.bias = get_tensor(r, {out});
        net.extractor.layers.push_back(std::move(l));
    }
    const auto mode = r.u8();
    require(mode <= 1, ErrorKind::Decode, "unknown head mode");
    net.head.mode = static_cast<HeadMode>(mode);
    net.head.scale = r.f64();
    const std::size_t classes = r.u32();
    net.head.old_classes = r.u32();
    const std::size_t d = r.u32();
    require(classes > 0 && d > 0 && net.head.old_classes <= classes, ErrorKind::Decode, "bad head header");
    net.head.weight = get_tensor(r, {classes, d});
    return net;
}

}  // namespace

std::vector<char> encode_checkpoint(const ModelState &state) {
    binio::Writer w;
    w.bytes(kModelMagic);
    w.u32(kModelVersion);
    w.u64(state.task);
    put_network(w, state.current);
    w.u8(state.frozen_previous ? 1 : 0);
    if (state.frozen_previous) put_network(w, *state.frozen_previous);
    return w.buffer();
}

ModelState decode_checkpoint(const std::vector<char> &bytes) {
    binio::Reader r(bytes);
    require(r.bytes(4) == kModelMagic, ErrorKind::Decode, "not a model checkpoint");
    require(r.u32() == kModelVersion, ErrorKind::Decode, "unsupported model checkpoint version");
    ModelState s;
    s.task = r.u64();
    s.current = get_network(r);
    if (r.u8()) s.frozen_previous = get_network(r);
    require(r.at_end(), ErrorKind::Decode, "trailing bytes in model checkpoint");
    return s;
}

void save_checkpoint(const ModelState &state, const std::string &path) {
    binio::write_file(path, encode_checkpoint(state));
}

ModelState load_checkpoint(const std::string &path) { return decode_checkpoint(binio::read_file(path)); }

}  // namespace apr
