#include "tsf/netcfg.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tsf {

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Pool: return "maxpool";
        case LayerKind::Relu: return "relu";
        case LayerKind::Fc: return "fc";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

int TowerConfig::layer_index(const std::string& layer_name) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == layer_name) return static_cast<int>(i);
    return -1;
}

TemporalHead head_from_string(const std::string& s) {
    if (s == "2d") return TemporalHead::Pool2D;
    if (s == "3dpool") return TemporalHead::Pool3D;
    if (s == "3dconv") return TemporalHead::ConvPool3D;
    throw std::invalid_argument("unknown temporal head '" + s + "' (expected 2d|3dpool|3dconv)");
}

std::string to_string(TemporalHead h) {
    switch (h) {
        case TemporalHead::Pool2D: return "2d";
        case TemporalHead::Pool3D: return "3dpool";
        case TemporalHead::ConvPool3D: return "3dconv";
    }
    return "?";
}

const TowerConfig& NetDef::tower(const std::string& tname) const {
    for (const auto& t : towers)
        if (t.name == tname) return t;
    throw std::invalid_argument("no tower named '" + tname + "' in network '" + name + "'");
}

bool NetDef::has_tower(const std::string& tname) const {
    for (const auto& t : towers)
        if (t.name == tname) return true;
    return false;
}

namespace {

struct ParseCtx {
    std::string source;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::invalid_argument(source + ":" + std::to_string(line) + ": " + msg);
    }
};

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream ss(line);
    std::string t;
    while (ss >> t) {
        if (t[0] == '#') break;
        toks.push_back(t);
    }
    return toks;
}

int parse_int(const ParseCtx& ctx, const std::string& s) {
    try {
        size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        ctx.fail("expected an integer, got '" + s + "'");
    }
}

double parse_double(const ParseCtx& ctx, const std::string& s) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        ctx.fail("expected a number, got '" + s + "'");
    }
}

// N or NxM
std::pair<int, int> parse_pair(const ParseCtx& ctx, const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos) {
        int v = parse_int(ctx, s);
        return {v, v};
    }
    return {parse_int(ctx, s.substr(0, x)), parse_int(ctx, s.substr(x + 1))};
}

bool parse_bool(const ParseCtx& ctx, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    ctx.fail("expected true/false, got '" + s + "'");
}

// key=value attributes plus bare flags
std::map<std::string, std::string> parse_attrs(const ParseCtx& ctx,
                                               const std::vector<std::string>& toks,
                                               size_t first) {
    std::map<std::string, std::string> attrs;
    for (size_t i = first; i < toks.size(); ++i) {
        auto eq = toks[i].find('=');
        std::string key = eq == std::string::npos ? toks[i] : toks[i].substr(0, eq);
        std::string val = eq == std::string::npos ? "true" : toks[i].substr(eq + 1);
        if (attrs.count(key)) ctx.fail("duplicate attribute '" + key + "'");
        attrs[key] = val;
    }
    return attrs;
}

template <class Map>
void reject_unknown(const ParseCtx& ctx, const Map& attrs, std::set<std::string> allowed) {
    for (const auto& [k, v] : attrs)
        if (!allowed.count(k)) ctx.fail("unknown attribute '" + k + "'");
}

LayerDef parse_layer(const ParseCtx& ctx, const std::vector<std::string>& toks) {
    if (toks.size() < 3) ctx.fail("layer line needs a name and a kind");
    LayerDef d;
    d.name = toks[1];
    const std::string& kind = toks[2];
    auto attrs = parse_attrs(ctx, toks, 3);
    auto get = [&](const char* k) -> std::optional<std::string> {
        auto it = attrs.find(k);
        if (it == attrs.end()) return std::nullopt;
        return it->second;
    };
    if (kind == "conv") {
        reject_unknown(ctx, attrs, {"filters", "kernel", "stride", "pad"});
        if (!get("filters") || !get("kernel")) ctx.fail("conv layer needs filters= and kernel=");
        d.kind = LayerKind::Conv;
        d.filters = parse_int(ctx, *get("filters"));
        std::tie(d.kh, d.kw) = parse_pair(ctx, *get("kernel"));
        if (get("stride")) std::tie(d.sh, d.sw) = parse_pair(ctx, *get("stride"));
        if (get("pad")) std::tie(d.ph, d.pw) = parse_pair(ctx, *get("pad"));
    } else if (kind == "maxpool") {
        reject_unknown(ctx, attrs, {"window", "stride", "ceil"});
        if (!get("window")) ctx.fail("maxpool layer needs window=");
        d.kind = LayerKind::Pool;
        std::tie(d.wh, d.ww) = parse_pair(ctx, *get("window"));
        if (get("stride")) std::tie(d.psh, d.psw) = parse_pair(ctx, *get("stride"));
        if (get("ceil")) d.ceil_mode = parse_bool(ctx, *get("ceil"));
    } else if (kind == "relu") {
        reject_unknown(ctx, attrs, {});
        d.kind = LayerKind::Relu;
    } else if (kind == "fc") {
        reject_unknown(ctx, attrs, {"out"});
        if (!get("out")) ctx.fail("fc layer needs out=");
        d.kind = LayerKind::Fc;
        if (*get("out") == "classes") {
            d.out_is_classes = true;
        } else {
            d.out = parse_int(ctx, *get("out"));
            if (d.out < 1) ctx.fail("fc out must be >= 1");
        }
    } else if (kind == "dropout") {
        reject_unknown(ctx, attrs, {"rate"});
        if (!get("rate")) ctx.fail("dropout layer needs rate=");
        d.kind = LayerKind::Dropout;
        d.rate = parse_double(ctx, *get("rate"));
        if (d.rate < 0.0 || d.rate >= 1.0) ctx.fail("dropout rate must be in [0,1)");
    } else if (kind == "softmax") {
        reject_unknown(ctx, attrs, {});
        d.kind = LayerKind::Softmax;
    } else {
        ctx.fail("unknown layer kind '" + kind + "'");
    }
    return d;
}

}  // namespace

NetDef parse_net_string(const std::string& text, const std::string& source_name) {
    NetDef def;
    ParseCtx ctx{source_name, 0};
    std::istringstream in(text);
    std::string line;
    TowerConfig* open_tower = nullptr;

    while (std::getline(in, line)) {
        ++ctx.line;
        auto toks = tokenize(line);
        if (toks.empty()) continue;
        const std::string& key = toks[0];

        if (key == "tower") {
            if (open_tower) ctx.fail("nested tower block (missing 'end'?)");
            if (toks.size() != 2) ctx.fail("tower line needs a name");
            if (def.has_tower(toks[1])) ctx.fail("duplicate tower '" + toks[1] + "'");
            def.towers.push_back(TowerConfig{toks[1], 0, {}});
            open_tower = &def.towers.back();
        } else if (key == "end") {
            if (!open_tower) ctx.fail("'end' outside a tower block");
            if (open_tower->in_channels < 1) ctx.fail("tower is missing 'channels'");
            if (open_tower->layers.empty()) ctx.fail("tower has no layers");
            open_tower = nullptr;
        } else if (key == "channels") {
            if (!open_tower) ctx.fail("'channels' outside a tower block");
            if (toks.size() != 2) ctx.fail("channels line needs a count");
            open_tower->in_channels = parse_int(ctx, toks[1]);
        } else if (key == "layer") {
            if (!open_tower) ctx.fail("'layer' outside a tower block");
            LayerDef d = parse_layer(ctx, toks);
            if (open_tower->layer_index(d.name) >= 0)
                ctx.fail("duplicate layer name '" + d.name + "'");
            open_tower->layers.push_back(d);
        } else if (key == "name") {
            if (toks.size() != 2) ctx.fail("name line needs a value");
            def.name = toks[1];
        } else if (key == "classes") {
            if (toks.size() != 2) ctx.fail("classes line needs a count");
            def.classes = parse_int(ctx, toks[1]);
        } else if (key == "input") {
            if (toks.size() != 3) ctx.fail("input line needs height and width");
            def.input_h = parse_int(ctx, toks[1]);
            def.input_w = parse_int(ctx, toks[2]);
        } else if (key == "fusion") {
            FusionSpecCfg f;
            auto attrs = parse_attrs(ctx, toks, 1);
            reject_unknown(ctx, attrs, {"method", "layers", "init", "keep_both", "scale", "sigma"});
            if (attrs.count("method")) f.method = fusion_method_from_string(attrs["method"]);
            if (attrs.count("init")) f.init = fusion_init_from_string(attrs["init"]);
            if (attrs.count("keep_both")) f.keep_both = parse_bool(ctx, attrs["keep_both"]);
            if (attrs.count("scale")) f.temporal_scale = parse_double(ctx, attrs["scale"]);
            if (attrs.count("sigma")) f.sigma = parse_double(ctx, attrs["sigma"]);
            if (attrs.count("layers")) {
                std::istringstream ls(attrs["layers"]);
                std::string l;
                while (std::getline(ls, l, ','))
                    if (!l.empty()) f.layers.push_back(l);
            }
            if (f.layers.empty()) ctx.fail("fusion line needs layers=");
            def.fusion = f;
        } else if (key == "head") {
            if (toks.size() < 2) ctx.fail("head line needs a type");
            HeadCfg h;
            h.type = head_from_string(toks[1]);
            auto attrs = parse_attrs(ctx, toks, 2);
            reject_unknown(ctx, attrs, {"tkernel"});
            if (attrs.count("tkernel")) h.t_kernel = parse_int(ctx, attrs["tkernel"]);
            def.head = h;
        } else {
            ctx.fail("unknown directive '" + key + "'");
        }
    }
    if (open_tower) throw std::invalid_argument(source_name + ": unterminated tower block");
    if (def.towers.empty()) throw std::invalid_argument(source_name + ": no towers defined");
    if (def.classes < 1) throw std::invalid_argument(source_name + ": missing 'classes'");
    if (def.input_h < 1 || def.input_w < 1)
        throw std::invalid_argument(source_name + ": missing 'input'");
    return def;
}

NetDef parse_net_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open architecture file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_net_string(ss.str(), path);
}

std::string write_net_string(const NetDef& def) {
    std::ostringstream os;
    if (!def.name.empty()) os << "name " << def.name << "\n";
    os << "classes " << def.classes << "\n";
    os << "input " << def.input_h << " " << def.input_w << "\n";
    for (const auto& t : def.towers) {
        os << "\ntower " << t.name << "\nchannels " << t.in_channels << "\n";
        for (const auto& d : t.layers) {
            os << "layer " << d.name << " " << to_string(d.kind);
            switch (d.kind) {
                case LayerKind::Conv:
                    os << " filters=" << d.filters << " kernel=" << d.kh << "x" << d.kw
                       << " stride=" << d.sh << "x" << d.sw << " pad=" << d.ph << "x" << d.pw;
                    break;
                case LayerKind::Pool:
                    os << " window=" << d.wh << "x" << d.ww << " stride=" << d.psh << "x"
                       << d.psw;
                    if (d.ceil_mode) os << " ceil=true";
                    break;
                case LayerKind::Fc:
                    os << " out=" << (d.out_is_classes ? std::string("classes")
                                                       : std::to_string(d.out));
                    break;
                case LayerKind::Dropout: os << " rate=" << d.rate; break;
                default: break;
            }
            os << "\n";
        }
        os << "end\n";
    }
    if (def.fusion) {
        const auto& f = *def.fusion;
        os << "\nfusion method=" << to_string(f.method) << " layers=";
        for (size_t i = 0; i < f.layers.size(); ++i) os << (i ? "," : "") << f.layers[i];
        os << " init=" << to_string(f.init) << " keep_both=" << (f.keep_both ? "true" : "false")
           << " scale=" << f.temporal_scale << " sigma=" << f.sigma << "\n";
    }
    if (def.head) os << "head " << to_string(def.head->type) << " tkernel=" << def.head->t_kernel
                     << "\n";
    return os.str();
}

}  // namespace tsf
