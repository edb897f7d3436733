// Writes the small synthetic corpus bundled under data/toy: three layer
// shards, a similarity dataset, an analogy dataset and probe labels.
//
// Every word has a latent vector; analogy pairs share a per-relation offset.
// Each layer adds a dominant shared direction, per-feature offsets and noise
// on top of the latent vector, so raw vectors evaluate poorly and
// post-processed ones recover the latent structure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "embproc/embstore.hpp"

namespace {

constexpr std::uint32_t kDim = 16;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double normal() {
    // Box-Muller, portable across standard libraries.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }

 private:
  std::mt19937_64 eng_;
};

std::vector<double> gaussian(Rng& rng, double scale) {
  std::vector<double> v(kDim);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

struct Word {
  std::string text;
  std::vector<double> latent;
  std::string label;
  std::size_t count = 0;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data/toy";
  std::filesystem::create_directories(dir);
  Rng rng(20200203);

  std::vector<Word> words;
  const std::vector<std::pair<std::string, std::string>> capitals = {
      {"france", "paris"}, {"italy", "rome"}, {"spain", "madrid"}, {"japan", "tokyo"}, {"egypt", "cairo"}, {"peru", "lima"}};
  const std::vector<std::pair<std::string, std::string>> plurals = {
      {"cat", "cats"}, {"dog", "dogs"}, {"car", "cars"}, {"tree", "trees"}, {"bird", "birds"}, {"house", "houses"}};
  const std::vector<std::string> nouns = {"apple", "banana", "river", "mountain", "music", "window", "garden"};
  const std::vector<std::string> adjectives = {"happy", "green", "quiet", "rapid", "bright", "young", "heavy"};

  const auto capital_offset = gaussian(rng, 1.5);
  const auto plural_offset = gaussian(rng, 1.5);
  auto add = [&](std::string text, std::vector<double> latent, std::string label, std::size_t lo, std::size_t hi) {
    words.push_back({std::move(text), std::move(latent), std::move(label), rng.between(lo, hi)});
  };
  for (const auto& [country, city] : capitals) {
    auto base = gaussian(rng, 1.0);
    add(country, base, "PROPN", 60, 150);
    for (std::size_t j = 0; j < kDim; ++j) base[j] += capital_offset[j];
    add(city, base, "PROPN", 60, 150);
  }
  for (const auto& [sing, plur] : plurals) {
    auto base = gaussian(rng, 1.0);
    add(sing, base, "NOUN", 60, 150);
    for (std::size_t j = 0; j < kDim; ++j) base[j] += plural_offset[j];
    add(plur, base, "NOUN", 60, 150);
  }
  for (const auto& w : nouns) add(w, gaussian(rng, 1.0), "NOUN", 60, 150);
  for (const auto& w : adjectives) add(w, gaussian(rng, 1.0), "ADJ", 60, 150);
  for (const auto& w : {"the", "of"}) add(w, gaussian(rng, 0.3), "DET", 250, 300);
  for (const auto& w : {"zephyr", "quasar", "obelisk"}) add(w, gaussian(rng, 1.0), "NOUN", 20, 45);

  // Occurrences in sentence-id order.
  struct Occ {
    std::size_t word;
    std::uint32_t sentence;
    std::vector<double> context;
  };
  std::vector<Occ> occs;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i < words[w].count; ++i) occs.push_back({w, 0, gaussian(rng, 0.35)});
  }
  std::vector<std::uint32_t> ids(occs.size());
  std::iota(ids.begin(), ids.end(), 0u);
  for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
  for (std::size_t i = 0; i < occs.size(); ++i) occs[i].sentence = ids[i];
  std::sort(occs.begin(), occs.end(), [](const Occ& a, const Occ& b) { return a.sentence < b.sentence; });

  const std::vector<std::string> classes = {"ADJ", "DET", "NOUN", "PROPN"};
  for (std::uint32_t layer = 0; layer < 3; ++layer) {
    auto shared = gaussian(rng, 1.0);
    const double norm = std::sqrt(std::inner_product(shared.begin(), shared.end(), shared.begin(), 0.0));
    for (auto& x : shared) x /= norm;
    const double strength = 4.0 + 6.0 * layer;
    const auto offsets = gaussian(rng, 2.0 + layer);
    std::vector<std::vector<double>> class_shift;
    for (std::size_t c = 0; c < classes.size(); ++c) class_shift.push_back(gaussian(rng, layer == 0 ? 0.0 : 0.8 * layer));

    embproc::ShardWriter writer(dir / ("layer" + std::to_string(layer) + ".ceb"), kDim, layer);
    std::vector<float> v(kDim);
    for (const auto& o : occs) {
      const Word& w = words[o.word];
      const std::size_t cls = static_cast<std::size_t>(
          std::find(classes.begin(), classes.end(), w.label) - classes.begin());
      const double common = strength * (1.0 + 0.3 * rng.normal());
      for (std::uint32_t j = 0; j < kDim; ++j) {
        const double x = w.latent[j] + o.context[j] + common * shared[j] + offsets[j] + class_shift[cls][j] +
                         0.25 * rng.normal();
        v[j] = static_cast<float>(x);
      }
      writer.write(w.text, o.sentence, v);
    }
    writer.close();
  }

  {
    std::ofstream sim(dir / "toy_sim.txt", std::ios::binary);
    sim << "# word1 word2 score (synthetic)\n";
    char buf[32];
    for (std::size_t i = 0; i + 1 < words.size(); i += 1) {
      for (std::size_t j = i + 1; j < words.size(); j += 7) {
        if (words[i].count < 50 || words[j].count < 50) continue;
        std::snprintf(buf, sizeof buf, "%.2f", 5.0 * (1.0 + cosine(words[i].latent, words[j].latent)));
        sim << words[i].text << '\t' << words[j].text << '\t' << buf << '\n';
      }
    }
    sim << "unicorn\tdragon\t7.00\n";
  }
  {
    std::ofstream ana(dir / "toy_analogy.txt", std::ios::binary);
    for (const auto* rel : {&capitals, &plurals}) {
      ana << ": " << (rel == &capitals ? "capital-common-countries" : "gram-plural") << '\n';
      for (const auto& p : *rel) {
        for (const auto& q : *rel) {
          if (&p == &q) continue;
          ana << p.first << ' ' << p.second << ' ' << q.first << ' ' << q.second << '\n';
        }
      }
    }
    ana << ": oov\nfrance paris atlantis poseidonia\n";
  }
  {
    std::ofstream lab(dir / "toy_labels.tsv", std::ios::binary);
    for (const auto& o : occs) {
      if (o.sentence % 2 == 0) lab << words[o.word].text << '\t' << o.sentence << '\t' << words[o.word].label << '\n';
    }
  }
  std::cout << "wrote " << occs.size() << " occurrences of " << words.size() << " words to " << dir.string() << '\n';
  return 0;
}
