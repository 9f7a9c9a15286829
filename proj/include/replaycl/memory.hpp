#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "replaycl/model.hpp"
#include "replaycl/sample.hpp"

namespace replaycl {

struct BufferEntry {
    Sample sample;
    std::optional<double> uncertainty;
};

// Capacity-L exemplar store. Entries never exceed the capacity and never
// contain duplicate sample ids. `stream_seen` is the reservoir algorithm's
// persistent observed-item count; other update rules leave it untouched.
struct ReplayBuffer {
    int capacity = 0;
    std::vector<BufferEntry> entries;
    std::map<int, int> per_class_quota;  // last quota applied, by class
    std::uint64_t stream_seen = 0;

    std::vector<Sample> samples() const;
    bool contains(const std::string& id) const;
    void validate() const;  // throws integrity_error on invariant breach
};

// Per-class slot count of the quota-based updates: floor(L / num_classes).
int quota(int capacity, int num_classes);

// Uniform sample without replacement from buffer + incoming.
ReplayBuffer update_random(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                           std::uint64_t seed);

// Classic streaming reservoir over the incoming items; after n observed
// items every item has inclusion probability capacity/n.
ReplayBuffer update_reservoir(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              std::uint64_t seed);

// Greedy herding per class: iteratively add the candidate that brings the
// selected set's embedding mean closest to the class mean.
ReplayBuffer update_prototype(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              Classifier& clf);

// Diversity-aware update: per class, sort candidates by uncertainty
// descending and keep every floor(|D_c|/k_c)-th one so the kept exemplars
// span the whole uncertainty spectrum.
ReplayBuffer update_diversity(const ReplayBuffer& buffer, const std::vector<Sample>& incoming, int capacity,
                              const std::map<std::string, double>& scores);

// Training pool for the task: buffer contents plus incoming data,
// deduplicated by sample id.
std::vector<Sample> build_training_set(const ReplayBuffer& buffer, const std::vector<Sample>& incoming);

struct BufferSnapshot {
    ReplayBuffer buffer;
    std::string strategy;
};

void save_buffer(const ReplayBuffer& buffer, const std::string& strategy, const std::string& path);
BufferSnapshot load_buffer(const std::string& path);

}  // namespace replaycl
