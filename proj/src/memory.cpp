#include "replaycl/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "replaycl/errors.hpp"
#include "replaycl/rng.hpp"

namespace replaycl {

using nlohmann::json;

std::vector<Sample> ReplayBuffer::samples() const {
    std::vector<Sample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.sample);
    return out;
}

bool ReplayBuffer::contains(const std::string& id) const {
    return std::any_of(entries.begin(), entries.end(), [&](const BufferEntry& e) { return e.sample.id == id; });
}

void ReplayBuffer::validate() const {
    if (capacity < 0) throw integrity_error("buffer: negative capacity");
    if (static_cast<int>(entries.size()) > capacity)
        throw integrity_error("buffer: " + std::to_string(entries.size()) + " entries exceed capacity " +
                              std::to_string(capacity));
    std::set<std::string> ids;
    std::map<int, int> per_class;
    for (const auto& e : entries) {
        if (!ids.insert(e.sample.id).second) throw integrity_error("buffer: duplicate id " + e.sample.id);
        if (e.uncertainty && (*e.uncertainty < 0.0 || *e.uncertainty > 1.0))
            throw integrity_error("buffer: uncertainty out of [0, 1] for " + e.sample.id);
        if (!e.sample.features.allFinite()) throw integrity_error("buffer: non-finite features for " + e.sample.id);
        ++per_class[e.sample.label];
    }
    for (const auto& [cls, count] : per_class) {
        const auto it = per_class_quota.find(cls);
        if (it != per_class_quota.end() && count > it->second)
            throw integrity_error("buffer: class " + std::to_string(cls) + " holds " + std::to_string(count) +
                                  " entries, quota is " + std::to_string(it->second));
    }
}

int quota(int capacity, int num_classes) {
    if (capacity < 0) throw contract_error("quota: capacity must be >= 0");
    if (num_classes < 1) throw contract_error("quota: num_classes must be >= 1");
    return capacity / num_classes;
}

namespace {

// buffer entries first (keeping their scores), then unseen incoming ids.
std::vector<BufferEntry> merge_candidates(const ReplayBuffer& buffer, const std::vector<Sample>& incoming) {
    std::vector<BufferEntry> out = buffer.entries;
    std::set<std::string> ids;
    for (const auto& e : buffer.entries) ids.insert(e.sample.id);
    for (const auto& s : incoming) {
        if (ids.insert(s.id).second) out.push_back(BufferEntry{s, std::nullopt});
    }
    return out;
}

void sort_by_id(std::vector<BufferEntry>& entries) {
    std::sort(entries.begin(), entries.end(),
              [](const BufferEntry& a, const BufferEntry& b) { return a.sample.id < b.sample.id; });
}

std::map<int, std::vector<BufferEntry>> group_by_class(std::vector<BufferEntry> candidates) {
    std::map<int, std::vector<BufferEntry>> groups;
    for (auto& e : candidates) groups[e.sample.label].push_back(std::move(e));
    return groups;
}

}  // namespace

ReplayBuffer update_random(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                           std::uint64_t seed) {
    auto candidates = merge_candidates(buffer, incoming);
    sort_by_id(candidates);
    Rng rng(derive_seed({seed, fnv1a64("mua-random")}));
    rng.shuffle(candidates);
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(capacity, 0)), candidates.size());
    candidates.resize(keep);
    sort_by_id(candidates);

    ReplayBuffer out;
    out.capacity = capacity;
    out.entries = std::move(candidates);
    out.stream_seen = buffer.stream_seen;
    return out;
}

ReplayBuffer update_reservoir(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              std::uint64_t seed) {
    ReplayBuffer out;
    out.capacity = capacity;
    out.entries = buffer.entries;
    out.stream_seen = buffer.stream_seen;
    if (static_cast<int>(out.entries.size()) > capacity) out.entries.resize(static_cast<std::size_t>(std::max(capacity, 0)));

    Rng rng(derive_seed({seed, fnv1a64("mua-reservoir")}));
    for (const auto& s : incoming) {
        ++out.stream_seen;
        if (out.contains(s.id)) continue;  // re-presented sample, already held
        if (static_cast<int>(out.entries.size()) < capacity) {
            out.entries.push_back(BufferEntry{s, std::nullopt});
            continue;
        }
        if (capacity == 0) continue;
        const auto m = rng.uniform_int(0, static_cast<std::int64_t>(out.stream_seen) - 1);
        if (m < capacity) out.entries[static_cast<std::size_t>(m)] = BufferEntry{s, std::nullopt};
    }
    return out;
}

ReplayBuffer update_prototype(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              Classifier& clf) {
    auto groups = group_by_class(merge_candidates(buffer, incoming));
    for (auto& [cls, group] : groups) sort_by_id(group);

    // Embed every candidate with the current model.
    std::map<std::string, Eigen::VectorXd> embeddings;
    for (const auto& [cls, group] : groups)
        for (const auto& e : group) embeddings[e.sample.id] = clf.forward(e.sample.features).embedding;

    const int n_classes = static_cast<int>(groups.size());
    const int k_c = n_classes == 0 ? 0 : quota(capacity, n_classes);

    // Greedy herding within one class: each step adds the candidate whose
    // inclusion moves the selected-set mean closest to the class mean.
    auto herd = [&](const std::vector<BufferEntry>& group, int count) {
        std::vector<BufferEntry> selected;
        if (group.empty() || count <= 0) return selected;
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(embeddings.at(group.front().sample.id).size());
        for (const auto& e : group) mu += embeddings.at(e.sample.id);
        mu /= static_cast<double>(group.size());

        std::vector<bool> taken(group.size(), false);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(mu.size());
        const int take = std::min<int>(count, static_cast<int>(group.size()));
        for (int step = 0; step < take; ++step) {
            double best = 0.0;
            std::ptrdiff_t best_idx = -1;
            for (std::size_t i = 0; i < group.size(); ++i) {
                if (taken[i]) continue;
                const double d = (mu - (sum + embeddings.at(group[i].sample.id)) / static_cast<double>(step + 1)).norm();
                if (best_idx < 0 || d < best) {  // ties resolved by id (group is id-sorted)
                    best = d;
                    best_idx = static_cast<std::ptrdiff_t>(i);
                }
            }
            taken[static_cast<std::size_t>(best_idx)] = true;
            sum += embeddings.at(group[static_cast<std::size_t>(best_idx)].sample.id);
            selected.push_back(group[static_cast<std::size_t>(best_idx)]);
        }
        return selected;
    };

    ReplayBuffer out;
    out.capacity = capacity;
    out.stream_seen = buffer.stream_seen;
    if (k_c == 0) {
        // Degenerate capacity < classes: one slot each for the first
        // `capacity` classes in ascending class order.
        int slots = capacity;
        for (const auto& [cls, group] : groups) {
            if (slots == 0) break;
            auto picked = herd(group, 1);
            out.entries.insert(out.entries.end(), picked.begin(), picked.end());
            out.per_class_quota[cls] = 1;
            --slots;
        }
        return out;
    }
    for (const auto& [cls, group] : groups) {
        auto picked = herd(group, k_c);
        out.entries.insert(out.entries.end(), picked.begin(), picked.end());
        out.per_class_quota[cls] = k_c;
    }
    return out;
}

ReplayBuffer update_diversity(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              const std::map<std::string, double>& scores) {
    auto groups = group_by_class(merge_candidates(buffer, incoming));
    for (const auto& [cls, group] : groups)
        for (const auto& e : group)
            if (!scores.count(e.sample.id))
                throw contract_error("update_diversity: missing uncertainty score for " + e.sample.id);

    // Sort each class by uncertainty descending, ties by id ascending.
    for (auto& [cls, group] : groups) {
        std::sort(group.begin(), group.end(), [&](const BufferEntry& a, const BufferEntry& b) {
            const double ua = scores.at(a.sample.id);
            const double ub = scores.at(b.sample.id);
            if (ua != ub) return ua > ub;
            return a.sample.id < b.sample.id;
        });
    }

    const int n_classes = static_cast<int>(groups.size());
    const int k_c = n_classes == 0 ? 0 : quota(capacity, n_classes);

    auto with_score = [&](const BufferEntry& e) { return BufferEntry{e.sample, scores.at(e.sample.id)}; };

    ReplayBuffer out;
    out.capacity = capacity;
    out.stream_seen = buffer.stream_seen;
    if (k_c == 0) {
        // Degenerate capacity < classes: one slot each for the `capacity`
        // classes with the largest maximum uncertainty.
        std::vector<int> order;
        for (const auto& [cls, group] : groups) order.push_back(cls);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double ua = scores.at(groups.at(a).front().sample.id);
            const double ub = scores.at(groups.at(b).front().sample.id);
            if (ua != ub) return ua > ub;
            return a < b;
        });
        for (int i = 0; i < capacity && i < static_cast<int>(order.size()); ++i) {
            out.entries.push_back(with_score(groups.at(order[static_cast<std::size_t>(i)]).front()));
            out.per_class_quota[order[static_cast<std::size_t>(i)]] = 1;
        }
        return out;
    }

    for (const auto& [cls, group] : groups) {
        const auto n = static_cast<long>(group.size());
        if (k_c >= n) {
            for (const auto& e : group) out.entries.push_back(with_score(e));
        } else {
            // j-th pick (1-based) is sorted index floor((j-1) * n / k_c):
            // always includes the most uncertain sample and strides the rest
            // evenly across the spectrum.
            for (long j = 1; j <= k_c; ++j) {
                const long idx = (j - 1) * n / k_c;
                out.entries.push_back(with_score(group[static_cast<std::size_t>(idx)]));
            }
        }
        out.per_class_quota[cls] = k_c;
    }
    return out;
}

std::vector<Sample> build_training_set(const ReplayBuffer& buffer, const std::vector<Sample>& incoming) {
    std::vector<Sample> out = buffer.samples();
    std::set<std::string> ids;
    for (const auto& s : out) ids.insert(s.id);
    for (const auto& s : incoming)
        if (ids.insert(s.id).second) out.push_back(s);
    return out;
}

void save_buffer(const ReplayBuffer& buffer, const std::string& strategy, const std::string& path) {
    json j;
    j["version"] = 1;
    j["capacity"] = buffer.capacity;
    j["strategy"] = strategy;
    j["stream_seen"] = buffer.stream_seen;
    json quotas = json::object();
    for (const auto& [cls, q] : buffer.per_class_quota) quotas[std::to_string(cls)] = q;
    j["per_class_quota"] = quotas;
    json entries = json::array();
    for (const auto& e : buffer.entries) {
        json je;
        je["id"] = e.sample.id;
        je["label"] = e.sample.label;
        if (e.uncertainty)
            je["u"] = *e.uncertainty;
        else
            je["u"] = nullptr;
        je["frames"] = e.sample.features.rows();
        je["dim"] = e.sample.features.cols();
        json feats = json::array();
        for (Eigen::Index r = 0; r < e.sample.features.rows(); ++r)
            for (Eigen::Index c = 0; c < e.sample.features.cols(); ++c) feats.push_back(e.sample.features(r, c));
        je["features"] = std::move(feats);
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);

    std::ofstream out(path);
    if (!out) throw io_error("cannot write buffer snapshot: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed: " + path);
}

BufferSnapshot load_buffer(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open buffer snapshot: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw integrity_error("buffer snapshot: " + std::string(e.what()));
    }
    BufferSnapshot snap;
    try {
        if (j.at("version").get<int>() != 1) throw integrity_error("buffer snapshot: unsupported version");
        snap.strategy = j.at("strategy").get<std::string>();
        snap.buffer.capacity = j.at("capacity").get<int>();
        snap.buffer.stream_seen = j.at("stream_seen").get<std::uint64_t>();
        for (const auto& [key, value] : j.at("per_class_quota").items())
            snap.buffer.per_class_quota[std::stoi(key)] = value.get<int>();
        for (const auto& je : j.at("entries")) {
            BufferEntry e;
            e.sample.id = je.at("id").get<std::string>();
            e.sample.label = je.at("label").get<int>();
            if (!je.at("u").is_null()) e.uncertainty = je.at("u").get<double>();
            const auto frames = je.at("frames").get<Eigen::Index>();
            const auto dim = je.at("dim").get<Eigen::Index>();
            const auto& feats = je.at("features");
            if (static_cast<Eigen::Index>(feats.size()) != frames * dim)
                throw integrity_error("buffer snapshot: feature length mismatch for " + e.sample.id);
            e.sample.features.resize(frames, dim);
            std::size_t idx = 0;
            for (Eigen::Index r = 0; r < frames; ++r)
                for (Eigen::Index c = 0; c < dim; ++c) e.sample.features(r, c) = feats[idx++].get<double>();
            snap.buffer.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw integrity_error("buffer snapshot: " + std::string(e.what()));
    }
    snap.buffer.validate();
    return snap;
}

}  // namespace replaycl
