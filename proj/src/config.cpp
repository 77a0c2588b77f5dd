#include "avatar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace avatar {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw ValidationError("config key '" + key + "': " + why);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad(key, "expected a number, got '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected an integer, got '" + v + "'");
    return out;
}

int int_in(const std::string& key, const std::string& v, long long lo, long long hi) {
    const long long x = parse_int(key, v);
    if (x < lo || x > hi) bad(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
}

std::uint64_t seed_of(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a non-negative integer, got '" + v + "'");
    return out;
}

// lo < x <= hi or lo <= x <= hi.
double double_in(const std::string& key, const std::string& v, double lo, double hi, bool open_lo) {
    const double x = parse_double(key, v);
    if ((open_lo ? !(x > lo) : !(x >= lo)) || !(x <= hi))
        bad(key, std::string("must lie in ") + (open_lo ? "(" : "[") + std::to_string(lo) + ", " + std::to_string(hi) +
                     "]");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(key, "expected true or false, got '" + v + "'");
}

std::vector<int> parse_widths(const std::string& key, const std::string& v, bool allow_empty) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(int_in(key, trim(item), 1, 4096));
    if (out.empty() && !allow_empty) bad(key, "needs at least one width");
    return out;
}

std::string fmt(double x) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, p);
}

std::string fmt(const std::vector<int>& widths) {
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i) out += (i ? "," : "") + std::to_string(widths[i]);
    return out;
}

struct Key {
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

const std::map<std::string, Key>& keys() {
    static const std::map<std::string, Key> table = [] {
        std::map<std::string, Key> k;
        constexpr long long kBig = 1'000'000'000;
        k["subjects"] = {[](const Config& c) { return std::to_string(c.data.subjects); },
                         [](Config& c, const std::string& v) {
                             if (parse_int("subjects", v) < 2) bad("subjects", "need >= 2 subjects");
                             c.data.subjects = int_in("subjects", v, 2, 100000);
                         }};
        k["frames"] = {[](const Config& c) { return std::to_string(c.data.frames); },
                       [](Config& c, const std::string& v) { c.data.frames = int_in("frames", v, 1, 1000); }};
        k["image_size"] = {[](const Config& c) { return std::to_string(c.data.image_size); },
                           [](Config& c, const std::string& v) { c.data.image_size = int_in("image_size", v, 16, 4096); }};
        k["train_fraction"] = {
            [](const Config& c) { return fmt(c.data.train_fraction); },
            [](Config& c, const std::string& v) {
                c.data.train_fraction = double_in("train_fraction", v, 0.0, 1.0, true);
                if (c.data.train_fraction >= 1.0) bad("train_fraction", "must lie in (0, 1)");
            }};
        k["seed"] = {[](const Config& c) { return std::to_string(c.data.seed); },
                     [](Config& c, const std::string& v) { c.data.seed = seed_of("seed", v); }};
        k["surface_points"] = {
            [](const Config& c) { return std::to_string(c.train.surface_points); },
            [](Config& c, const std::string& v) { c.train.surface_points = int_in("surface_points", v, 0, kBig); }};
        k["uniform_points"] = {
            [](const Config& c) { return std::to_string(c.train.uniform_points); },
            [](Config& c, const std::string& v) { c.train.uniform_points = int_in("uniform_points", v, 0, kBig); }};
        k["sigma"] = {[](const Config& c) { return fmt(c.train.sigma); },
                      [](Config& c, const std::string& v) { c.train.sigma = double_in("sigma", v, 0.0, 1.0, false); }};
        k["pe_frequencies"] = {
            [](const Config& c) { return std::to_string(c.train.net.pe_frequencies); },
            [](Config& c, const std::string& v) { c.train.net.pe_frequencies = int_in("pe_frequencies", v, 0, 30); }};
        k["pixel_width"] = {
            [](const Config& c) { return std::to_string(c.train.net.pixel_width); },
            [](Config& c, const std::string& v) { c.train.net.pixel_width = int_in("pixel_width", v, 1, 4096); }};
        k["embed_widths"] = {
            [](const Config& c) { return fmt(c.train.net.embed_widths); },
            [](Config& c, const std::string& v) { c.train.net.embed_widths = parse_widths("embed_widths", v, false); }};
        k["head_widths"] = {
            [](const Config& c) { return fmt(c.train.net.head_widths); },
            [](Config& c, const std::string& v) { c.train.net.head_widths = parse_widths("head_widths", v, true); }};
        k["fusion"] = {[](const Config& c) { return net::to_string(c.train.net.fusion); },
                       [](Config& c, const std::string& v) {
                           if (v != "average" && v != "attention") bad("fusion", "expected average or attention");
                           c.train.net.fusion = net::fusion_from_string(v);
                       }};
        k["attention_dim"] = {
            [](const Config& c) { return std::to_string(c.train.net.attention_dim); },
            [](Config& c, const std::string& v) { c.train.net.attention_dim = int_in("attention_dim", v, 1, 4096); }};
        k["ohem_ratio"] = {
            [](const Config& c) { return fmt(c.train.loss.ohem_ratio); },
            [](Config& c, const std::string& v) { c.train.loss.ohem_ratio = double_in("ohem_ratio", v, 0.0, 1.0, true); }};
        k["skin_weight"] = {
            [](const Config& c) { return fmt(c.train.loss.skin_weight); },
            [](Config& c, const std::string& v) { c.train.loss.skin_weight = double_in("skin_weight", v, 0.0, 1e3, false); }};
        k["occupancy_loss"] = {
            [](const Config& c) { return std::string(c.train.loss.occupancy == net::OccupancyLoss::kBce ? "bce" : "mse"); },
            [](Config& c, const std::string& v) {
                if (v == "bce")
                    c.train.loss.occupancy = net::OccupancyLoss::kBce;
                else if (v == "mse")
                    c.train.loss.occupancy = net::OccupancyLoss::kMse;
                else
                    bad("occupancy_loss", "expected bce or mse");
            }};
        k["lr"] = {[](const Config& c) { return fmt(c.train.lr); },
                   [](Config& c, const std::string& v) { c.train.lr = double_in("lr", v, 0.0, 10.0, false); }};
        k["steps"] = {[](const Config& c) { return std::to_string(c.train.steps); },
                      [](Config& c, const std::string& v) { c.train.steps = int_in("steps", v, 0, kBig); }};
        k["frames_per_step"] = {
            [](const Config& c) { return std::to_string(c.train.frames_per_step); },
            [](Config& c, const std::string& v) { c.train.frames_per_step = int_in("frames_per_step", v, 1, 1000); }};
        k["augment"] = {[](const Config& c) { return std::string(c.train.augment ? "true" : "false"); },
                        [](Config& c, const std::string& v) { c.train.augment = parse_bool("augment", v); }};
        k["log_every"] = {[](const Config& c) { return std::to_string(c.train.log_every); },
                          [](Config& c, const std::string& v) { c.train.log_every = int_in("log_every", v, 1, kBig); }};
        k["train_seed"] = {[](const Config& c) { return std::to_string(c.train.seed); },
                           [](Config& c, const std::string& v) { c.train.seed = seed_of("train_seed", v); }};
        k["fit_max_iters"] = {
            [](const Config& c) { return std::to_string(c.fit.max_iters); },
            [](Config& c, const std::string& v) { c.fit.max_iters = int_in("fit_max_iters", v, 0, kBig); }};
        k["fit_lr"] = {[](const Config& c) { return fmt(c.fit.lr); },
                       [](Config& c, const std::string& v) { c.fit.lr = double_in("fit_lr", v, 0.0, 1e6, true); }};
        k["fit_lambda"] = {[](const Config& c) { return fmt(c.fit.lambda); },
                           [](Config& c, const std::string& v) { c.fit.lambda = double_in("fit_lambda", v, 0.0, 1e6, false); }};
        k["fit_tol"] = {[](const Config& c) { return fmt(c.fit.tol); },
                        [](Config& c, const std::string& v) { c.fit.tol = double_in("fit_tol", v, 0.0, 1.0, false); }};
        k["fit_preconditioner"] = {
            [](const Config& c) {
                return std::string(c.fit.preconditioner == fit::Preconditioner::kDiagonal ? "diagonal" : "gauss_newton");
            },
            [](Config& c, const std::string& v) {
                if (v == "diagonal")
                    c.fit.preconditioner = fit::Preconditioner::kDiagonal;
                else if (v == "gauss_newton")
                    c.fit.preconditioner = fit::Preconditioner::kGaussNewton;
                else
                    bad("fit_preconditioner", "expected gauss_newton or diagonal");
            }};
        k["noise_beta"] = {[](const Config& c) { return fmt(c.noise.beta); },
                           [](Config& c, const std::string& v) { c.noise.beta = double_in("noise_beta", v, 0.0, 0.5, false); }};
        k["noise_theta"] = {
            [](const Config& c) { return fmt(c.noise.theta); },
            [](Config& c, const std::string& v) { c.noise.theta = double_in("noise_theta", v, 0.0, 3.14, false); }};
        k["noise_pixels"] = {
            [](const Config& c) { return fmt(c.noise.pixels); },
            [](Config& c, const std::string& v) { c.noise.pixels = double_in("noise_pixels", v, 0.0, 1e3, false); }};
        k["fit_seed"] = {[](const Config& c) { return std::to_string(c.fit_seed); },
                         [](Config& c, const std::string& v) { c.fit_seed = seed_of("fit_seed", v); }};
        k["resolution"] = {[](const Config& c) { return std::to_string(c.resolution); },
                           [](Config& c, const std::string& v) { c.resolution = int_in("resolution", v, 16, 1024); }};
        k["iso"] = {[](const Config& c) { return fmt(c.iso); },
                    [](Config& c, const std::string& v) {
                        c.iso = double_in("iso", v, 0.0, 1.0, true);
                        if (c.iso >= 1.0) bad("iso", "must lie in (0, 1)");
                    }};
        return k;
    }();
    return table;
}

}  // namespace

Config Config::desk() {
    Config c;
    c.data.subjects = 22;
    c.data.frames = 6;
    c.data.image_size = 128;
    c.data.train_fraction = 0.9;
    c.train.surface_points = 1800;
    c.train.uniform_points = 200;
    c.train.steps = 3000;
    return c;
}

Config Config::paper() {
    Config c = desk();
    c.data.subjects = 200;
    c.data.train_fraction = 0.95;
    c.data.image_size = 512;
    c.train.surface_points = 14756;
    c.train.uniform_points = 1628;
    return c;
}

Config Config::preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ValidationError("unknown preset '" + name + "' (expected desk or paper)");
}

void Config::set(const std::string& key, const std::string& value) {
    const auto& table = keys();
    const auto it = table.find(key);
    if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second.set(*this, trim(value));
}

void Config::validate() const {
    data.validate();
    train.validate();
    fit.validate();
    if (resolution < 16) throw ValidationError("config key 'resolution': must be >= 16");
}

bool Config::operator==(const Config& other) const { return to_text(*this) == to_text(other); }

Config parse_config(const std::string& text, Config base) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    base.validate();
    return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string to_text(const Config& config) {
    std::string out;
    for (const auto& [key, k] : keys()) out += key + " = " + k.get(config) + "\n";
    return out;
}

}  // namespace avatar
