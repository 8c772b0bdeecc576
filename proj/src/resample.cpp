#include "pimap/resample.hpp"

#include <algorithm>
#include <map>
#include <vector>

namespace pimap {
namespace {

struct Group {
  InstanceId id{0};
  double mass = 0.0;
  std::vector<int> members;
  int slots = 0;
};

int draw_member(const std::vector<int>& members, std::span<const Particle> slots, Rng& rng) {
  double w_max = 0.0;
  for (int m : members) w_max = std::max(w_max, slots[m].weight);
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  if (!(w_max > 0.0)) return members[pick(rng)];
  std::uniform_real_distribution<double> accept(0.0, 1.0);
  for (;;) {
    const int m = members[pick(rng)];
    if (accept(rng) * w_max < slots[m].weight) return m;
  }
}

}  // namespace

int resample_cell(std::span<Particle> slots, Rng& rng, std::optional<Step> exempt_step) {
  if (exempt_step && std::all_of(slots.begin(), slots.end(), [&](const Particle& p) {
        return !p.valid || p.born_step == *exempt_step;
      }))
    return static_cast<int>(std::count_if(slots.begin(), slots.end(), [](const Particle& p) { return p.valid; }));
  std::map<InstanceId, Group> by_id;
  int exempt = 0;
  int n = 0;
  double pruned_mass = 0.0;
  std::vector<int> pruned;
  for (int i = 0; i < static_cast<int>(slots.size()); ++i) {
    const Particle& p = slots[i];
    if (!p.valid) continue;
    if (exempt_step && p.born_step == *exempt_step) {
      ++exempt;
      continue;
    }
    if (p.weight < kNegligibleWeight) {
      pruned_mass += p.weight;
      pruned.push_back(i);
      continue;
    }
    Group& g = by_id[p.instance];
    g.id = p.instance;
    g.mass += p.weight;
    g.members.push_back(i);
    ++n;
  }
  if (n == 0) {
    if (pruned.empty()) return exempt;
    // Only negligible particles: the heaviest keeps their mass.
    const int heaviest = *std::max_element(pruned.begin(), pruned.end(),
                                           [&](int a, int b) { return slots[a].weight < slots[b].weight; });
    for (int i : pruned) slots[i].valid = false;
    slots[heaviest].valid = true;
    slots[heaviest].weight = pruned_mass;
    return exempt + 1;
  }
  for (int i : pruned) slots[i].valid = false;
  const int keep = std::max(1, n / 2);

  std::vector<Group*> groups;
  double total = 0.0;
  for (auto& [id, g] : by_id) {
    groups.push_back(&g);
    total += g.mass;
  }

  // Pruned mass goes to the survivors so the cell total is kept.
  double scale = total > 0.0 ? (total + pruned_mass) / total : 1.0;
  if (static_cast<int>(groups.size()) > keep) {
    std::stable_sort(groups.begin(), groups.end(),
                     [](const Group* a, const Group* b) { return a->mass > b->mass; });
    groups.resize(keep);
    double kept = 0.0;
    for (Group* g : groups) {
      g->slots = 1;
      kept += g->mass;
    }
    scale = kept > 0.0 ? (total + pruned_mass) / kept : 1.0;
  } else {
    // One slot each, the rest by largest remainder of the mass share.
    int spare = keep - static_cast<int>(groups.size());
    std::vector<std::pair<double, Group*>> remainders;
    const int share_total = spare;
    for (Group* g : groups) {
      const double share = total > 0.0 ? share_total * g->mass / total
                                       : static_cast<double>(share_total) / groups.size();
      const int whole = static_cast<int>(share);
      g->slots = 1 + whole;
      spare -= whole;
      remainders.emplace_back(share - whole, g);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; spare > 0; i = (i + 1) % remainders.size(), --spare) remainders[i].second->slots++;
  }

  std::vector<Particle> survivors;
  survivors.reserve(keep);
  for (Group* g : groups) {
    const double w = g->mass * scale / g->slots;
    for (int s = 0; s < g->slots; ++s) {
      Particle p = slots[draw_member(g->members, slots, rng)];
      p.weight = w;
      survivors.push_back(p);
    }
  }

  for (auto& [id, g] : by_id) {
    for (int m : g.members) slots[m].valid = false;
  }
  std::size_t next = 0;
  for (Particle& slot : slots) {
    if (next == survivors.size()) break;
    if (!slot.valid) slot = survivors[next++];
  }
  return exempt + static_cast<int>(survivors.size());
}

}  // namespace pimap
