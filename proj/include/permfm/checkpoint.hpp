#pragma once

// Text checkpoint: a "key value" header followed by parameter and Adam moment
// arrays, one hexadecimal float per line. Hex floats round-trip exactly.

#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "permfm/dataset_io.hpp"
#include "permfm/errors.hpp"
#include "permfm/net.hpp"
#include "permfm/optim.hpp"

namespace permfm {

inline constexpr int checkpoint_version = 1;
inline constexpr const char* checkpoint_magic = "permfm-checkpoint";

struct Checkpoint {
    VelocityNet net;
    OptimState optim;
    /// Extra provenance (task, seed, epoch, resolved config). Values are single-line.
    std::map<std::string, std::string> meta;
};

inline std::string format_hex(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    return std::string(buf, res.ptr);
}

inline double parse_hex(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw CorruptFileError("bad hex float '" + std::string(s) + "'");
    return v;
}

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
    return s.empty() ? "-" : s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    if (s == "-") return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    return out;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    const auto& a = ck.net.arch();
    const auto& c = ck.optim.cfg;
    std::ostringstream o;
    o << checkpoint_magic << ' ' << checkpoint_version << '\n';
    o << "n " << a.n << '\n';
    o << "ctx_dim " << a.ctx_dim << '\n';
    o << "enc_hidden " << detail::join_sizes(a.enc_hidden) << '\n';
    o << "embed_dim " << a.embed_dim << '\n';
    o << "head_hidden " << detail::join_sizes(a.head_hidden) << '\n';
    o << "activation " << to_string(a.act) << '\n';
    o << "uses_state " << a.uses_state << '\n';
    o << "uses_time " << a.uses_time << '\n';
    o << "adam.lr " << format_hex(c.lr) << '\n';
    o << "adam.lr_floor " << format_hex(c.lr_floor) << '\n';
    o << "adam.beta1 " << format_hex(c.beta1) << '\n';
    o << "adam.beta2 " << format_hex(c.beta2) << '\n';
    o << "adam.eps " << format_hex(c.eps) << '\n';
    o << "adam.weight_decay " << format_hex(c.weight_decay) << '\n';
    o << "adam.total_steps " << c.total_steps << '\n';
    o << "adam.step " << ck.optim.step << '\n';
    for (const auto& [k, v] : ck.meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ConfigError("checkpoint meta key/value must be single-line: " + k);
        o << "meta." << k << ' ' << v << '\n';
    }
    auto block = [&](const char* name, const std::vector<double>& xs) {
        o << name << ' ' << xs.size() << '\n';
        for (double x : xs) o << format_hex(x) << '\n';
    };
    block("params", ck.net.params());
    block("adam.m", ck.optim.m);
    block("adam.v", ck.optim.v);
    o << "end\n";
    return o.str();
}

inline Checkpoint parse_checkpoint(const std::string& text, std::optional<std::size_t> expect_n = std::nullopt,
                                   const std::string& origin = "<memory>") {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw CorruptFileError(origin + ": truncated before " + what);
        return line;
    };
    {
        std::istringstream first(next("magic"));
        std::string magic;
        int version = -1;
        first >> magic >> version;
        if (magic != checkpoint_magic) throw CorruptFileError(origin + ": not a permfm checkpoint");
        if (version != checkpoint_version)
            throw VersionError(origin + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                               std::to_string(checkpoint_version));
    }

    std::map<std::string, std::string> kv;
    std::map<std::string, std::string> meta;
    std::vector<double> params, m, v;
    auto read_block = [&](std::size_t count, std::vector<double>& dst) {
        dst.reserve(count);
        for (std::size_t k = 0; k < count; ++k) dst.push_back(parse_hex(next("end of array")));
    };
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw CorruptFileError(origin + ": malformed line '" + line + "'");
        const std::string key = line.substr(0, sp);
        const std::string val = line.substr(sp + 1);
        try {
            if (key == "params") read_block(std::stoul(val), params);
            else if (key == "adam.m") read_block(std::stoul(val), m);
            else if (key == "adam.v") read_block(std::stoul(val), v);
            else if (key.rfind("meta.", 0) == 0) meta[key.substr(5)] = val;
            else kv[key] = val;
        } catch (const std::logic_error&) {
            throw CorruptFileError(origin + ": bad array length in '" + line + "'");
        }
    }
    if (!ended) throw CorruptFileError(origin + ": missing end marker");

    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw CorruptFileError(origin + ": missing key '" + key + "'");
        return it->second;
    };
    NetArch arch;
    AdamConfig cfg;
    std::uint64_t step = 0;
    try {
        arch.n = std::stoul(get("n"));
        arch.ctx_dim = std::stoul(get("ctx_dim"));
        arch.enc_hidden = detail::split_sizes(get("enc_hidden"));
        arch.embed_dim = std::stoul(get("embed_dim"));
        arch.head_hidden = detail::split_sizes(get("head_hidden"));
        arch.act = parse_activation(get("activation"));
        arch.uses_state = get("uses_state") == "1";
        arch.uses_time = get("uses_time") == "1";
        cfg.lr = parse_hex(get("adam.lr"));
        cfg.lr_floor = parse_hex(get("adam.lr_floor"));
        cfg.beta1 = parse_hex(get("adam.beta1"));
        cfg.beta2 = parse_hex(get("adam.beta2"));
        cfg.eps = parse_hex(get("adam.eps"));
        cfg.weight_decay = parse_hex(get("adam.weight_decay"));
        cfg.total_steps = std::stoull(get("adam.total_steps"));
        step = std::stoull(get("adam.step"));
    } catch (const std::logic_error&) {
        throw CorruptFileError(origin + ": malformed header value");
    } catch (const ConfigError& e) {
        throw CorruptFileError(origin + ": " + e.what());
    }
    if (expect_n && *expect_n != arch.n) {
        throw DimensionError(origin + ": checkpoint has n = " + std::to_string(arch.n) + ", expected " +
                             std::to_string(*expect_n));
    }

    Checkpoint ck{VelocityNet(arch), OptimState(cfg, 0), std::move(meta)};
    ck.net.set_params(std::move(params));
    if (m.size() != ck.net.param_count() || v.size() != ck.net.param_count())
        throw CorruptFileError(origin + ": moment arrays do not match parameter count");
    ck.optim.m = std::move(m);
    ck.optim.v = std::move(v);
    ck.optim.step = step;
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path, std::optional<std::size_t> expect_n = std::nullopt) {
    return parse_checkpoint(read_file(path), expect_n, path);
}

} // namespace permfm
