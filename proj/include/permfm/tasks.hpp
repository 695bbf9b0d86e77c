#pragma once

#include <vector>

#include "permfm/dataset_io.hpp"
#include "permfm/evalkit.hpp"
#include "permfm/flow.hpp"
#include "permfm/instances.hpp"

namespace permfm {

/// SLAP context: the flattened cost matrix.
inline std::vector<double> observables(const SlapInstance& s) { return s.cost.raw(); }

/// Sorting context: features centred on the grid but kept in grid units.
/// Squashing them into [-1, 1] made neighbouring ranks differ by less than
/// the initial first-layer weights can resolve, and sorting accuracy suffered.
inline std::vector<double> observables(const SortInstance& s, const SortGenConfig& gen = {}) {
    const double mid = (static_cast<double>(gen.grid(s.n)) - 1.0) / 2.0;
    std::vector<double> out(s.features.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s.features[i] - mid;
    return out;
}

inline std::vector<double> observables(const Dataset& ds, std::size_t i) {
    return ds.task == Task::slap ? observables(ds.slap.at(i)) : observables(ds.sort.at(i));
}

inline const std::vector<PermMatrix>& modes_of(const Dataset& ds, std::size_t i) {
    return ds.task == Task::slap ? ds.slap.at(i).modes : ds.sort.at(i).modes;
}

inline std::vector<FlowItem> flow_items(const Dataset& ds) {
    std::vector<FlowItem> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({observables(ds, i), modes_of(ds, i)});
    return out;
}

inline std::vector<EvalItem> eval_items(const Dataset& ds) {
    std::vector<EvalItem> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out.push_back(ds.task == Task::slap ? eval_item(ds.slap[i], i) : eval_item(ds.sort[i], i));
    return out;
}

} // namespace permfm
