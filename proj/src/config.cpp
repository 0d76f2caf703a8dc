#include "amt/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "amt/errors.hpp"

namespace amt {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw UsageError("config " + key + ": '" + v + "' is not an integer");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config " + key + ": '" + v + "' is not a number");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    std::string s = v;
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw UsageError("config " + key + ": '" + v + "' is not a boolean");
}

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto as_int = [&](int lo, int hi) {
        long long x = parse_int(key, value);
        if (x < lo || x > hi)
            throw UsageError("config " + key + ": " + value + " out of range [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return static_cast<int>(x);
    };
    if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "threads") threads = as_int(1, 256);
    else if (key == "n_f") n_f = as_int(1, 1 << 20);
    else if (key == "n_t") n_t = as_int(2, 1 << 20);
    else if (key == "max_hop") max_hop = as_int(1, 1024);
    else if (key == "batch_segments") batch_segments = as_int(1, 4096);
    else if (key == "d_model") d_model = as_int(1, 1 << 16);
    else if (key == "encoder_layers") encoder_layers = as_int(1, 64);
    else if (key == "decoder_layers") decoder_layers = as_int(1, 64);
    else if (key == "attn_heads") attn_heads = as_int(1, 256);
    else if (key == "ff_dim") ff_dim = as_int(1, 1 << 20);
    else if (key == "memory_heads") memory_heads = as_int(1, 256);
    else if (key == "l_agg") l_agg = as_int(0, 1 << 20);
    else if (key == "dropout") dropout = parse_double(key, value);
    else if (key == "share_memory_embedding") share_memory_embedding = parse_bool(key, value);
    else if (key == "lr_peak") lr_peak = parse_double(key, value);
    else if (key == "lr_floor") lr_floor = parse_double(key, value);
    else if (key == "warmup_steps") warmup_steps = parse_int(key, value);
    else if (key == "total_steps") total_steps = parse_int(key, value);
    else if (key == "augment") augment = parse_bool(key, value);
    else if (key == "tolerance_s") tolerance_s = parse_double(key, value);
    else if (key == "log_every") log_every = as_int(1, 1 << 20);
    else if (key == "eval_every") eval_every = as_int(1, 1 << 20);
    else if (key == "manifest") manifest = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else throw UsageError("unknown config key: " + key);
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = {
        "seed",          "threads",       "n_f",
        "n_t",           "max_hop",       "batch_segments",
        "d_model",       "encoder_layers", "decoder_layers",
        "attn_heads",    "ff_dim",        "memory_heads",
        "l_agg",         "dropout",       "share_memory_embedding",
        "lr_peak",       "lr_floor",      "warmup_steps",
        "total_steps",   "augment",       "tolerance_s",
        "log_every",     "eval_every",    "manifest",
        "out_dir",       "checkpoint"};
    return k;
}

std::string RunConfig::dump() const {
    std::ostringstream out;
    out << "seed=" << seed << "\n";
    out << "threads=" << threads << "\n";
    out << "n_f=" << n_f << "\n";
    out << "n_t=" << n_t << "\n";
    out << "max_hop=" << max_hop << "\n";
    out << "batch_segments=" << batch_segments << "\n";
    out << "d_model=" << d_model << "\n";
    out << "encoder_layers=" << encoder_layers << "\n";
    out << "decoder_layers=" << decoder_layers << "\n";
    out << "attn_heads=" << attn_heads << "\n";
    out << "ff_dim=" << ff_dim << "\n";
    out << "memory_heads=" << memory_heads << "\n";
    out << "l_agg=" << l_agg << "\n";
    out << "dropout=" << fmt_double(dropout) << "\n";
    out << "share_memory_embedding=" << (share_memory_embedding ? "true" : "false") << "\n";
    out << "lr_peak=" << fmt_double(lr_peak) << "\n";
    out << "lr_floor=" << fmt_double(lr_floor) << "\n";
    out << "warmup_steps=" << warmup_steps << "\n";
    out << "total_steps=" << total_steps << "\n";
    out << "augment=" << (augment ? "true" : "false") << "\n";
    out << "tolerance_s=" << fmt_double(tolerance_s) << "\n";
    out << "log_every=" << log_every << "\n";
    out << "eval_every=" << eval_every << "\n";
    out << "manifest=" << manifest << "\n";
    out << "out_dir=" << out_dir << "\n";
    out << "checkpoint=" << checkpoint << "\n";
    return out.str();
}

SegmentConfig RunConfig::segment_config() const {
    SegmentConfig s;
    s.n_f = n_f;
    s.n_t = n_t;
    s.max_hop = max_hop;
    s.batch_segments = batch_segments;
    return s;
}

ModelConfig RunConfig::model_config(int vocab_size) const {
    ModelConfig m;
    m.d_model = d_model;
    m.encoder_layers = encoder_layers;
    m.decoder_layers = decoder_layers;
    m.attn_heads = attn_heads;
    m.ff_dim = ff_dim;
    m.memory_heads = memory_heads;
    m.l_agg = l_agg;
    m.n_f = n_f;
    m.n_t = n_t;
    m.frame_dim = kNMels;
    m.vocab = vocab_size;
    m.dropout = dropout;
    m.share_memory_embedding = share_memory_embedding;
    m.validate();
    return m;
}

LrSchedule RunConfig::schedule() const {
    if (lr_peak <= 0 || lr_floor < 0 || lr_floor > lr_peak)
        throw UsageError("config: need lr_peak > 0 and 0 <= lr_floor <= lr_peak");
    if (warmup_steps < 0 || total_steps <= 0)
        throw UsageError("config: need warmup_steps >= 0 and total_steps > 0");
    LrSchedule s;
    s.peak = lr_peak;
    s.floor = lr_floor;
    s.warmup = warmup_steps;
    s.total = total_steps;
    return s;
}

RunConfig RunConfig::load(const std::string& file_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw UsageError("cannot open config file: " + file_path);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(file_path + ":" + std::to_string(line_no) +
                                 ": expected key=value");
            try {
                cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
            } catch (const UsageError& e) {
                throw UsageError(file_path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    for (const auto& key : keys()) {
        std::string env = "AMT_" + key;
        std::transform(env.begin(), env.end(), env.begin(),
                       [](unsigned char c) { return std::toupper(c); });
        if (const char* v = std::getenv(env.c_str())) cfg.set(key, v);
    }
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
}

}  // namespace amt
