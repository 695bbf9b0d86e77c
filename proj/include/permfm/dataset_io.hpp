#pragma once

// Line-delimited JSON datasets. Line 1 is a header object, every further line
// one instance. Doubles are printed in shortest round-trip form, so a
// write/read cycle reproduces every field bit for bit.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "permfm/errors.hpp"
#include "permfm/instances.hpp"

namespace permfm {

inline constexpr int dataset_schema_version = 1;
inline constexpr const char* dataset_format_tag = "permfm-dataset";

struct Dataset {
    Task task = Task::slap;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::vector<SlapInstance> slap;
    std::vector<SortInstance> sort;
    /// Free-form provenance copied into the header (resolved config, stats).
    nlohmann::json meta = nlohmann::json::object();

    std::size_t size() const { return task == Task::slap ? slap.size() : sort.size(); }
    std::size_t ambiguous_count() const {
        std::size_t c = 0;
        for (const auto& s : slap) c += s.kind == SlapKind::bimodal;
        for (const auto& s : sort) c += s.kind == SortKind::ambiguous;
        return c;
    }
};

inline std::uint64_t fnv1a64(std::string_view bytes) { return hash_label(bytes); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << bytes;
    if (!out) throw IoError("write to '" + path + "' failed");
}

namespace detail {

using nlohmann::json;

inline json perms_to_json(const std::vector<PermMatrix>& modes) {
    json arr = json::array();
    for (const auto& m : modes) arr.push_back(m.assign());
    return arr;
}

inline std::vector<PermMatrix> perms_from_json(const json& j) {
    std::vector<PermMatrix> out;
    for (const auto& a : j) out.emplace_back(a.get<std::vector<int>>());
    return out;
}

inline json slap_to_json(const SlapInstance& s, std::size_t id) {
    return json{{"id", id},
                {"kind", s.kind == SlapKind::clean ? "clean" : "bimodal"},
                {"cost", s.cost.raw()},
                {"modes", perms_to_json(s.modes)},
                {"optimal_cost", s.optimal_cost}};
}

inline SlapInstance slap_from_json(const json& j, std::size_t n) {
    SlapInstance s;
    s.n = n;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "clean") s.kind = SlapKind::clean;
    else if (kind == "bimodal") s.kind = SlapKind::bimodal;
    else throw CorruptFileError("unknown SLAP kind '" + kind + "'");
    s.cost = SquareMatrix(n, j.at("cost").get<std::vector<double>>());
    s.modes = perms_from_json(j.at("modes"));
    s.optimal_cost = j.at("optimal_cost").get<double>();
    return s;
}

inline json sort_to_json(const SortInstance& s, std::size_t id) {
    json j{{"id", id},
           {"kind", s.kind == SortKind::clean ? "clean" : "ambiguous"},
           {"features", s.features},
           {"latent", s.latent},
           {"modes", perms_to_json(s.modes)}};
    if (s.alpha) j["alpha"] = *s.alpha;
    if (s.blend_item) j["blend_item"] = *s.blend_item;
    if (s.blend_values) j["blend_values"] = {s.blend_values->first, s.blend_values->second};
    return j;
}

inline SortInstance sort_from_json(const json& j, std::size_t n) {
    SortInstance s;
    s.n = n;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "clean") s.kind = SortKind::clean;
    else if (kind == "ambiguous") s.kind = SortKind::ambiguous;
    else throw CorruptFileError("unknown sort kind '" + kind + "'");
    s.features = j.at("features").get<std::vector<double>>();
    s.latent = j.at("latent").get<std::vector<double>>();
    if (s.features.size() != n || s.latent.size() != n) throw DimensionError("sort record length differs from header n");
    s.modes = perms_from_json(j.at("modes"));
    if (j.contains("alpha")) s.alpha = j.at("alpha").get<double>();
    if (j.contains("blend_item")) s.blend_item = j.at("blend_item").get<std::size_t>();
    if (j.contains("blend_values")) {
        const auto& bv = j.at("blend_values");
        s.blend_values = std::make_pair(bv.at(0).get<double>(), bv.at(1).get<double>());
    }
    return s;
}

} // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
    using nlohmann::json;
    const std::size_t count = ds.size();
    const std::size_t amb = ds.ambiguous_count();
    json header{{"format", dataset_format_tag},
                {"schema_version", dataset_schema_version},
                {"task", to_string(ds.task)},
                {"n", ds.n},
                {"count", count},
                {"kinds", ds.task == Task::slap ? json{{"clean", count - amb}, {"bimodal", amb}}
                                                : json{{"clean", count - amb}, {"ambiguous", amb}}},
                {"seed", ds.seed},
                {"meta", ds.meta}};
    std::string out = header.dump() + "\n";
    for (std::size_t i = 0; i < count; ++i) {
        const json rec = ds.task == Task::slap ? detail::slap_to_json(ds.slap[i], i) : detail::sort_to_json(ds.sort[i], i);
        out += rec.dump();
        out += '\n';
    }
    return out;
}

inline Dataset parse_dataset(const std::string& text, const std::string& origin = "<memory>") {
    using nlohmann::json;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw CorruptFileError(origin + ": empty dataset file");

    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw CorruptFileError(origin + ": header is not valid JSON (" + e.what() + ")");
    }
    if (!header.is_object() || header.value("format", std::string{}) != dataset_format_tag)
        throw CorruptFileError(origin + ": not a permfm dataset");
    const int version = header.value("schema_version", -1);
    if (version != dataset_schema_version) {
        throw VersionError(origin + ": schema version " + std::to_string(version) + ", this build reads " +
                           std::to_string(dataset_schema_version));
    }

    Dataset ds;
    std::size_t count = 0;
    try {
        ds.task = parse_task(header.at("task").get<std::string>());
        ds.n = header.at("n").get<std::size_t>();
        ds.seed = header.at("seed").get<std::uint64_t>();
        count = header.at("count").get<std::size_t>();
        if (header.contains("meta")) ds.meta = header.at("meta");
    } catch (const json::exception& e) {
        throw CorruptFileError(origin + ": malformed header (" + e.what() + ")");
    }

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            if (ds.task == Task::slap) ds.slap.push_back(detail::slap_from_json(rec, ds.n));
            else ds.sort.push_back(detail::sort_from_json(rec, ds.n));
        } catch (const json::exception& e) {
            throw CorruptFileError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw CorruptFileError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.size() != count) {
        throw CorruptFileError(origin + ": header announces " + std::to_string(count) + " records, found " +
                               std::to_string(ds.size()));
    }
    return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) { write_file(path, serialize_dataset(ds)); }

inline Dataset read_dataset(const std::string& path) { return parse_dataset(read_file(path), path); }

} // namespace permfm
