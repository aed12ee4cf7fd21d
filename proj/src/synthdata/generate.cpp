#include "bit/errors.hpp"
#include "bit/synthdata/dataset.hpp"
#include "bit/synthdata/rng.hpp"

#include <algorithm>

namespace bit::synth {

namespace {

Matrix normal_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Orthonormal basis of the column space of `m`, with the sign convention diag(R) > 0.
Matrix orthonormalize(const Matrix& m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

Matrix random_rotation(Rng& rng, Index n) { return orthonormalize(normal_matrix(rng, n, n)); }

}  // namespace

std::string_view to_string(Modality m) { return m == Modality::kVisible ? "vis" : "ir"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
    case Split::kHoldout: return "holdout";
  }
  return "train";
}

Modality parse_modality(std::string_view s) {
  if (s == "vis") return Modality::kVisible;
  if (s == "ir") return Modality::kInfrared;
  throw ConfigError("unknown modality '" + std::string(s) + "' (expected vis or ir)");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "query") return Split::kQuery;
  if (s == "gallery") return Split::kGallery;
  if (s == "holdout") return Split::kHoldout;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

void GenConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("gen config: " + msg);
  };
  require(num_identities > 0, "num_identities must be positive");
  require(num_test_identities >= 0 && num_test_identities < num_identities,
          "num_test_identities must lie in [0, num_identities)");
  require(vis_per_id >= 1, "vis_per_id must be at least 1");
  require(ir_per_id >= 1, "ir_per_id must be at least 1");
  require(patches >= 1, "patches must be positive");
  require(raw_dim >= 2, "raw_dim must be at least 2");
  require(noise_sigma >= 0, "noise_sigma must be non-negative");
  require(collision_groups >= 1 && collision_groups <= num_identities,
          "collision_groups must lie in [1, num_identities]");
  require(modality_gap >= 0 && modality_gap <= 1, "modality_gap must lie in [0, 1]");
}

int GenConfig::group_of(int identity) const {
  return static_cast<int>(static_cast<long long>(identity) * collision_groups / num_identities);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Dataset generate(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0));
  const Index n = cfg.patches;
  const Index da = cfg.appearance_dim();
  const Index ds = cfg.structure_dim();

  // Modality transforms. Appearance: independent per modality. Structure: the
  // infrared mixing is pulled away from the visible one by `modality_gap`.
  const Matrix app_vis = random_rotation(rng, da);
  const Matrix app_ir = random_rotation(rng, da);
  const Matrix str_vis = random_rotation(rng, ds);
  const Matrix str_other = random_rotation(rng, ds);
  const Matrix str_ir =
      orthonormalize((1.0 - cfg.modality_gap) * str_vis + cfg.modality_gap * str_other);

  std::vector<Matrix> group_signature;
  for (int g = 0; g < cfg.collision_groups; ++g) group_signature.push_back(normal_matrix(rng, n, da));
  std::vector<Matrix> latent;
  for (int id = 0; id < cfg.num_identities; ++id) latent.push_back(normal_matrix(rng, n, da + ds));

  Dataset out;
  out.config = cfg;
  auto noisy = [&](Matrix m) {
    if (cfg.noise_sigma > 0) m += cfg.noise_sigma * normal_matrix(rng, m.rows(), m.cols());
    return m;
  };

  for (int id = 0; id < cfg.num_identities; ++id) {
    const bool test = id >= cfg.num_train_identities();
    const Matrix& z = latent[static_cast<std::size_t>(id)];
    Matrix vis(n, da + ds);
    vis << z.leftCols(da) * app_vis, z.rightCols(ds) * str_vis;
    Matrix ir(n, da + ds);
    ir << group_signature[static_cast<std::size_t>(cfg.group_of(id))] * app_ir,
        z.rightCols(ds) * str_ir;

    for (int j = 0; j < cfg.vis_per_id; ++j) {
      SynthSample s;
      s.identity = id;
      s.modality = Modality::kVisible;
      s.split = !test ? Split::kTrain : (j == 0 ? Split::kGallery : Split::kHoldout);
      s.camera = j % 2;
      s.patches = noisy(vis);
      out.samples.push_back(std::move(s));
    }
    for (int j = 0; j < cfg.ir_per_id; ++j) {
      SynthSample s;
      s.identity = id;
      s.modality = Modality::kInfrared;
      s.split = test ? Split::kQuery : Split::kTrain;
      s.camera = 2 + j % 2;
      s.patches = noisy(ir);
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

std::size_t Dataset::count(Split split, Modality modality) const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](const auto& s) {
    return s.split == split && s.modality == modality;
  }));
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices(Split split, Modality modality) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split && samples[i].modality == modality) out.push_back(i);
  }
  return out;
}

std::vector<int> Dataset::train_identities() const {
  std::vector<int> ids;
  for (const auto& s : samples) {
    if (s.split == Split::kTrain) ids.push_back(s.identity);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace bit::synth
