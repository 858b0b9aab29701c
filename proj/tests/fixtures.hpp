// Shared test fixtures: the song-KG fragment used across the rule tests and
// a planted-structure synthetic dataset generator for pipeline runs.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rgrec/common.hpp"
#include "rgrec/dataset.hpp"
#include "rgrec/graph.hpp"

namespace fixtures {

// Song fragment: a user listens to Red and Katy Parry, speaks English;
// Style shares Taylor Swift with Red, is in English, and its singer shares
// a nationality with Katy Parry. `with_target` adds the (user, interacts,
// Style) edge that path search explains.
inline rgrec::KnowledgeGraph song_fragment(bool with_target) {
  std::vector<rgrec::LabeledTriple> triples = {
      {"user", "interacts", "Red"},
      {"user", "interacts", "KatyParry"},
      {"user", "motherTongue", "English"},
      {"Red", "singer", "TaylorSwift"},
      {"Style", "singer", "TaylorSwift"},
      {"Style", "language", "English"},
      {"KatyParry", "nationality", "USA"},
      {"TaylorSwift", "nationality", "USA"},
  };
  if (with_target) triples.push_back({"user", "interacts", "Style"});
  return rgrec::build_graph(triples);
}

struct SyntheticDataset {
  std::string ratings_path;
  std::string kg_path;
  std::size_t interactions = 0;
};

// Items carry genre edges; each user mostly interacts with one genre plus a
// little noise, so (interacts, has_genre, has_genre__inv) is predictive.
inline SyntheticDataset write_synthetic_dataset(const std::string& dir, std::uint64_t seed,
                                                int n_users = 30, int n_items = 40,
                                                int n_genres = 3, int per_user = 8) {
  std::filesystem::create_directories(dir);
  rgrec::Rng rng(seed);

  std::vector<int> genre(n_items);
  for (int i = 0; i < n_items; ++i) genre[i] = static_cast<int>(rng.next_below(n_genres));

  SyntheticDataset out;
  out.kg_path = dir + "/kg.txt";
  std::ofstream kg(out.kg_path);
  for (int i = 0; i < n_items; ++i)
    kg << "item" << i << "\thas_genre\tgenre" << genre[i] << "\n";
  kg.close();

  std::vector<std::pair<int, int>> pos;
  for (int u = 0; u < n_users; ++u) {
    int pref = u % n_genres;
    std::vector<int> liked;
    for (int i = 0; i < n_items; ++i)
      if (genre[i] == pref) liked.push_back(i);
    rng.shuffle(liked);
    for (int t = 0; t < per_user && t < static_cast<int>(liked.size()); ++t)
      pos.emplace_back(u, liked[t]);
    pos.emplace_back(u, static_cast<int>(rng.next_below(n_items)));  // noise
  }
  std::sort(pos.begin(), pos.end());
  pos.erase(std::unique(pos.begin(), pos.end()), pos.end());

  out.ratings_path = dir + "/ratings.txt";
  std::ofstream ratings(out.ratings_path);
  for (auto [u, i] : pos) ratings << u << "\titem" << i << "\t1\n";
  ratings.close();
  out.interactions = pos.size();
  return out;
}

inline std::string temp_dir(const std::string& name) {
  std::string dir = (std::filesystem::temp_directory_path() / name).string();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
