#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vita/harness.hpp"

namespace vita {

// Per-image records:
//   image,label,predicted_class,target_class,cam,metric,baseline,astro,k,tau,phi,alpha,beta
// Astro parameter columns are empty when no modulation was applied. Reals use
// the shortest representation that round-trips exactly.
void write_records_csv(std::ostream& out, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_csv(std::istream& in);

// {"groups": [{cam, metric, n, vit: {mean, median, sd}, vita: {...},
//  p_value, exact}], "failures": N}
std::string summary_json(const std::vector<StatsRow>& rows, std::size_t failures);

// rank,k,tau,phi,alpha,beta,mean,baseline_mean,evaluated,failures
void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);

std::string format_real(double v);

}  // namespace vita
