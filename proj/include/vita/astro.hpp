#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vita/tensor.hpp"

namespace vita {

// Hyperparameters of the astrocytic linear layer.
struct AstroParams {
    int k = 0;           // modulated iterations
    int tau = 1;         // response speed: activity needed before modulating
    double phi = 0.0;    // activation threshold on the CLS output
    double alpha = 1.0;  // excitatory factor, >= 1
    double beta = 0.5;   // inhibitory factor, in (0, 1)

    // Throws UsageError when a field is outside its domain.
    void validate() const;
    std::string to_string() const;

    friend bool operator==(const AstroParams&, const AstroParams&) = default;
};

// Parses "k,tau,phi,alpha,beta".
AstroParams parse_astro_params(const std::string& text);

// Per-neuron iteration state. M is diagonal and kept as a vector.
struct AstroState {
    std::vector<int> activity;     // A, clamped to [-tau, tau]
    std::vector<double> m_diag;    // accumulated modulation
    int t = 0;

    explicit AstroState(std::size_t neurons) : activity(neurons, 0), m_diag(neurons, 1.0) {}
};

struct AstroStep {
    int t = 0;
    std::vector<double> y_cls;     // CLS row of y(t), before normalization
    std::vector<int> activity;     // A(t)
    std::vector<double> m;         // m(t); all ones at t = 0
    std::vector<double> m_diag;    // diag M(t)
};

struct AstroTrace {
    std::vector<AstroStep> steps;  // k + 1 entries, t = 0..k
    double mean_norm_initial = 0.0;  // mean_i ||y_i(0)||
    double mean_norm_final = 0.0;    // mean_i ||y_i(k)||
};

// Activity update: +1 when y_cls >= phi, -1 otherwise, clamped to [-tau, tau].
int update_activity(int previous, double y_cls, double phi, int tau);

// alpha when activity has saturated at +tau, beta at -tau, otherwise 1.
double modulation_factor(int activity, int tau, double alpha, double beta);

// Rescales yk so its mean per-token L2 norm matches that of y0 (mean over
// all rows, CLS included). Throws NumericError if yk's mean norm is zero.
Tensor normalize_output(const Tensor& y0, const Tensor& yk);

struct AstroResult {
    Tensor output;
    AstroTrace trace;
};

// Runs the linear layer x W^T + b once unmodulated (t = 0) and then k more
// times with W's rows scaled by the accumulated modulation. The state is
// driven by row 0 (the CLS token) of the previous iteration's raw output.
// k = 0 returns y(0) untouched.
AstroResult astro_linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, const AstroParams& params);

// One JSON object per iteration.
void write_trace_jsonl(std::ostream& out, const AstroTrace& trace);
void write_trace_jsonl(const std::filesystem::path& path, const AstroTrace& trace);

}  // namespace vita
