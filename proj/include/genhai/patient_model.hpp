#pragma once

// Admission (alpha) and test-time (beta) features, their numeric encodings,
// and the exact conditioning vector handed to each of the 13 sub-programs.
//
// Layout table. Blocks are concatenated in the order the sequence simulator
// passes its arguments to each sub-program:
//
//   D_beta_1_ab   alpha                                           11
//   D_beta_1_icu  ab, alpha                                       12
//   D_beta_1_dia  icu, ab, alpha                                  13
//   D_t_1, D_r_1  alpha, beta                                     14
//   D_cont        r, alpha, beta                                  15
//   D_d_neg/pos   alpha, beta_prev                                14
//   D_beta_i_ab   alpha, beta_prev, r_prev, log1p_d_prev          16
//   D_beta_i_icu  ab, alpha, beta_prev, r_prev, log1p_d_prev      17
//   D_beta_i_dia  icu, ab, alpha, beta_prev, r_prev, log1p_d_prev 18
//   D_t_i, D_r_i  alpha, beta, r_prev, log1p_d_prev               16
//
// Scalings: age enters as years/100, ab as days/30, icu as days/7 and the
// previous delay as ln(1 + days).

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "genhai/error.hpp"

namespace genhai {

inline constexpr int kAbCensor = 30;
inline constexpr int kIcuCensor = 7;

enum class AdmissionType { emergency = 0, elective = 1, newborn = 2, other = 3 };

inline std::string_view to_string(AdmissionType t) {
  switch (t) {
    case AdmissionType::emergency: return "emergency";
    case AdmissionType::elective: return "elective";
    case AdmissionType::newborn: return "newborn";
    case AdmissionType::other: return "other";
  }
  return "other";
}

inline AdmissionType parse_admission_type(std::string_view s) {
  if (s == "emergency") return AdmissionType::emergency;
  if (s == "elective") return AdmissionType::elective;
  if (s == "newborn") return AdmissionType::newborn;
  if (s == "other") return AdmissionType::other;
  throw DomainError("unknown admission_type '" + std::string(s) + "'");
}

struct AdmissionFeatures {
  bool gender = false;
  double age_years = 0.0;
  AdmissionType admission_type = AdmissionType::emergency;
  bool from_healthcare_facility = false;
  bool cerebrovascular_history = false;
  bool diabetes = false;
  bool hospitalized_past_90d = false;
  bool mrsa_positive_past_90d = false;

  void validate() const {
    if (!(age_years >= 0.0 && age_years <= 120.0)) {
      throw DomainError("age_years must lie in [0, 120]");
    }
  }

  bool operator==(const AdmissionFeatures&) const = default;
};

struct TestTimeFeatures {
  int ab_days_30 = 0;
  int icu_days_7 = 0;
  bool dialysis_7d = false;

  void validate() const {
    if (ab_days_30 < 0 || ab_days_30 > kAbCensor) throw DomainError("ab_days_30 must lie in [0, 30]");
    if (icu_days_7 < 0 || icu_days_7 > kIcuCensor) throw DomainError("icu_days_7 must lie in [0, 7]");
  }

  bool operator==(const TestTimeFeatures&) const = default;
};

// ------------------------------------------------------------- sub-programs

enum class SubProgramId : int {
  cont = 0,
  beta1_ab,
  beta1_icu,
  beta1_dia,
  t1,
  r1,
  d_pos,
  d_neg,
  betai_ab,
  betai_icu,
  betai_dia,
  t_i,
  r_i,
};

inline constexpr std::size_t kNumSubPrograms = 13;

inline constexpr std::array<SubProgramId, kNumSubPrograms> kAllSubPrograms = {
    SubProgramId::cont,     SubProgramId::beta1_ab,  SubProgramId::beta1_icu, SubProgramId::beta1_dia,
    SubProgramId::t1,       SubProgramId::r1,        SubProgramId::d_pos,     SubProgramId::d_neg,
    SubProgramId::betai_ab, SubProgramId::betai_icu, SubProgramId::betai_dia, SubProgramId::t_i,
    SubProgramId::r_i,
};

inline constexpr std::array<std::string_view, kNumSubPrograms> kSubProgramNames = {
    "D_cont",      "D_beta_1_ab",  "D_beta_1_icu", "D_beta_1_dia", "D_t_1", "D_r_1", "D_d_pos",
    "D_d_neg",     "D_beta_i_ab",  "D_beta_i_icu", "D_beta_i_dia", "D_t_i", "D_r_i",
};

inline constexpr std::size_t index_of(SubProgramId id) { return static_cast<std::size_t>(id); }

inline std::string_view name_of(SubProgramId id) { return kSubProgramNames[index_of(id)]; }

inline SubProgramId parse_subprogram(std::string_view name) {
  for (std::size_t i = 0; i < kNumSubPrograms; ++i) {
    if (kSubProgramNames[i] == name) return kAllSubPrograms[i];
  }
  throw DomainError("unknown sub-program '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- encodings

struct EncodedVector {
  std::vector<double> values;
  std::span<const std::string> layout;

  std::size_t size() const { return values.size(); }
};

inline const std::vector<std::string>& alpha_field_names() {
  static const std::vector<std::string> names = {
      "gender",     "age_over_100",          "adm_emergency",         "adm_elective",
      "adm_newborn", "adm_other",            "from_healthcare_facility", "cerebrovascular_history",
      "diabetes",   "hospitalized_past_90d", "mrsa_positive_past_90d",
  };
  return names;
}

inline constexpr std::size_t kAlphaDim = 11;
inline constexpr std::size_t kBetaDim = 3;

inline void append_alpha(std::vector<double>& out, const AdmissionFeatures& a) {
  out.push_back(a.gender ? 1.0 : 0.0);
  out.push_back(a.age_years / 100.0);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<int>(a.admission_type) == k ? 1.0 : 0.0);
  out.push_back(a.from_healthcare_facility ? 1.0 : 0.0);
  out.push_back(a.cerebrovascular_history ? 1.0 : 0.0);
  out.push_back(a.diabetes ? 1.0 : 0.0);
  out.push_back(a.hospitalized_past_90d ? 1.0 : 0.0);
  out.push_back(a.mrsa_positive_past_90d ? 1.0 : 0.0);
}

inline double scale_ab(int ab) { return ab / static_cast<double>(kAbCensor); }
inline double scale_icu(int icu) { return icu / static_cast<double>(kIcuCensor); }
inline double scale_delay(double d) { return std::log1p(d); }

inline void append_beta(std::vector<double>& out, const TestTimeFeatures& b) {
  out.push_back(scale_ab(b.ab_days_30));
  out.push_back(scale_icu(b.icu_days_7));
  out.push_back(b.dialysis_7d ? 1.0 : 0.0);
}

inline EncodedVector encode_alpha(const AdmissionFeatures& a) {
  a.validate();
  EncodedVector v;
  append_alpha(v.values, a);
  v.layout = alpha_field_names();
  return v;
}

inline EncodedVector encode_beta(const TestTimeFeatures& b) {
  static const std::vector<std::string> names = {"ab_over_30", "icu_over_7", "dialysis_7d"};
  b.validate();
  EncodedVector v;
  append_beta(v.values, b);
  v.layout = names;
  return v;
}

// --------------------------------------------------------- conditioning layout

/// One argument block of a conditioning vector.
enum class Block {
  alpha,          ///< 11 admission features
  beta,           ///< the current test's full beta (3)
  beta_prev,      ///< the previous test's beta (3)
  ab,             ///< current ab, freshly sampled within the step
  icu,            ///< current icu, freshly sampled within the step
  r,              ///< the current test's result
  r_prev,         ///< previous test's result
  log1p_d_prev,   ///< ln(1 + delay since the previous test)
};

inline std::size_t block_dim(Block b) {
  switch (b) {
    case Block::alpha: return kAlphaDim;
    case Block::beta:
    case Block::beta_prev: return kBetaDim;
    default: return 1;
  }
}

inline std::string_view block_name(Block b) {
  switch (b) {
    case Block::alpha: return "alpha";
    case Block::beta: return "beta";
    case Block::beta_prev: return "beta_prev";
    case Block::ab: return "ab";
    case Block::icu: return "icu";
    case Block::r: return "r";
    case Block::r_prev: return "r_prev";
    case Block::log1p_d_prev: return "log1p_d_prev";
  }
  return "?";
}

inline const std::vector<Block>& conditioning_blocks(SubProgramId id) {
  using B = Block;
  static const std::array<std::vector<Block>, kNumSubPrograms> table = {{
      {B::r, B::alpha, B::beta},                                             // cont
      {B::alpha},                                                            // beta1_ab
      {B::ab, B::alpha},                                                     // beta1_icu
      {B::icu, B::ab, B::alpha},                                             // beta1_dia
      {B::alpha, B::beta},                                                   // t1
      {B::alpha, B::beta},                                                   // r1
      {B::alpha, B::beta_prev},                                              // d_pos
      {B::alpha, B::beta_prev},                                              // d_neg
      {B::alpha, B::beta_prev, B::r_prev, B::log1p_d_prev},                  // betai_ab
      {B::ab, B::alpha, B::beta_prev, B::r_prev, B::log1p_d_prev},           // betai_icu
      {B::icu, B::ab, B::alpha, B::beta_prev, B::r_prev, B::log1p_d_prev},   // betai_dia
      {B::alpha, B::beta, B::r_prev, B::log1p_d_prev},                       // t_i
      {B::alpha, B::beta, B::r_prev, B::log1p_d_prev},                       // r_i
  }};
  return table[index_of(id)];
}

/// Blocks carrying the sub-program's own outcome or anything sampled after it
/// within the same step. None of them may appear in its conditioning layout.
inline std::vector<Block> outcome_blocks(SubProgramId id) {
  switch (id) {
    case SubProgramId::beta1_ab:
    case SubProgramId::betai_ab: return {Block::ab, Block::beta};
    case SubProgramId::beta1_icu:
    case SubProgramId::betai_icu: return {Block::icu, Block::beta};
    case SubProgramId::beta1_dia:
    case SubProgramId::betai_dia: return {Block::beta};
    case SubProgramId::r1:
    case SubProgramId::r_i: return {Block::r};
    case SubProgramId::t1:
    case SubProgramId::t_i: return {Block::r};
    case SubProgramId::d_pos:
    case SubProgramId::d_neg: return {Block::log1p_d_prev, Block::beta};
    case SubProgramId::cont: return {};
  }
  return {};
}

inline std::size_t input_dim(SubProgramId id) {
  std::size_t d = 0;
  for (Block b : conditioning_blocks(id)) d += block_dim(b);
  return d;
}

/// Ordered field names of a sub-program's conditioning vector.
inline std::span<const std::string> conditioning_layout(SubProgramId id) {
  static const std::array<std::vector<std::string>, kNumSubPrograms> layouts = [] {
    std::array<std::vector<std::string>, kNumSubPrograms> out;
    for (SubProgramId sid : kAllSubPrograms) {
      auto& names = out[index_of(sid)];
      for (Block b : conditioning_blocks(sid)) {
        const std::string prefix(block_name(b));
        if (b == Block::alpha) {
          for (const auto& f : alpha_field_names()) names.push_back("alpha." + f);
        } else if (b == Block::beta || b == Block::beta_prev) {
          for (const char* f : {"ab_over_30", "icu_over_7", "dialysis_7d"}) names.push_back(prefix + "." + f);
        } else {
          names.push_back(prefix);
        }
      }
    }
    return out;
  }();
  return layouts[index_of(id)];
}

/// Everything a sub-program might be conditioned on at one point of a
/// simulated or observed sequence.
struct StepContext {
  AdmissionFeatures alpha;
  std::optional<TestTimeFeatures> beta_prev;
  std::optional<int> r_prev;
  std::optional<double> d_prev;
  // Current test's beta chain, filled in sampling order ab -> icu -> dia.
  std::optional<int> ab;
  std::optional<int> icu;
  std::optional<bool> dia;
  std::optional<int> r;

  void validate() const {
    if (r_prev.has_value() != d_prev.has_value()) {
      throw ContractError("step context: r_prev and d_prev must be both present or both absent");
    }
  }
};

namespace detail {

[[noreturn]] inline void missing(SubProgramId id, std::string_view field) {
  throw ContractError(std::string(name_of(id)) + " requires context field '" + std::string(field) + "'");
}

}  // namespace detail

/// Writes the conditioning vector of `id` into `out` (cleared first).
inline void conditioning_vector_into(SubProgramId id, const StepContext& ctx, std::vector<double>& out) {
  out.clear();
  ctx.validate();
  for (Block b : conditioning_blocks(id)) {
    switch (b) {
      case Block::alpha: append_alpha(out, ctx.alpha); break;
      case Block::beta:
        if (!ctx.ab) detail::missing(id, "ab");
        if (!ctx.icu) detail::missing(id, "icu");
        if (!ctx.dia) detail::missing(id, "dia");
        out.push_back(scale_ab(*ctx.ab));
        out.push_back(scale_icu(*ctx.icu));
        out.push_back(*ctx.dia ? 1.0 : 0.0);
        break;
      case Block::beta_prev:
        if (!ctx.beta_prev) detail::missing(id, "beta_prev");
        append_beta(out, *ctx.beta_prev);
        break;
      case Block::ab:
        if (!ctx.ab) detail::missing(id, "ab");
        out.push_back(scale_ab(*ctx.ab));
        break;
      case Block::icu:
        if (!ctx.icu) detail::missing(id, "icu");
        out.push_back(scale_icu(*ctx.icu));
        break;
      case Block::r:
        if (!ctx.r) detail::missing(id, "r");
        out.push_back(static_cast<double>(*ctx.r));
        break;
      case Block::r_prev:
        if (!ctx.r_prev) detail::missing(id, "r_prev");
        out.push_back(static_cast<double>(*ctx.r_prev));
        break;
      case Block::log1p_d_prev:
        if (!ctx.d_prev) detail::missing(id, "d_prev");
        out.push_back(scale_delay(*ctx.d_prev));
        break;
    }
  }
}

inline EncodedVector conditioning_vector(SubProgramId id, const StepContext& ctx) {
  EncodedVector v;
  conditioning_vector_into(id, ctx, v.values);
  v.layout = conditioning_layout(id);
  return v;
}

}  // namespace genhai
