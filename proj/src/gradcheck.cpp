#include "cornerdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cornerdet/ops.hpp"

namespace cornerdet {

namespace {

Tensor projection_weights(const Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> w(shape.numel());
    for (double& v : w) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (u < 0.5 ? -1.0 : 1.0) * (0.5 + u);
    }
    return Tensor::from_data(shape, std::move(w));
}

std::vector<std::size_t> pick_coords(std::size_t count, std::size_t limit, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    if (limit == 0 || limit >= count) return idx;
    for (std::size_t i = 0; i < limit; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (count - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradCheckReport finite_diff_check(const TensorFn& fn, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options) {
    if (options.step <= 0.0) throw Error("finite_diff_check: step must be positive");
    std::vector<Tensor> args = inputs;
    for (Tensor& t : args) {
        if (!t.impl()->is_leaf()) throw Error("finite_diff_check: inputs must be leaf tensors");
        t.set_requires_grad(true);
        t.zero_grad();
    }

    Tensor weights;
    auto scalarize = [&](const Tensor& y) {
        if (y.numel() == 1) return y;
        if (!weights.defined()) weights = projection_weights(y.shape(), options.seed);
        return sum(mul(y, weights));
    };

    {
        Tensor loss = scalarize(fn(args));
        loss.backward();
    }
    std::vector<std::vector<double>> analytic;
    for (const Tensor& t : args) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
    }

    NoGradGuard no_grad;
    auto evaluate = [&](std::uint64_t& fingerprint) {
        KinkRecorder recorder;
        const double v = scalarize(fn(args)).item();
        fingerprint = recorder.fingerprint();
        return v;
    };
    std::uint64_t base_print = 0;
    evaluate(base_print);

    GradCheckReport report;
    std::mt19937_64 rng(options.seed ^ 0xa5a5a5a5ULL);
    for (std::size_t k = 0; k < args.size(); ++k) {
        auto values = args[k].mutable_data();
        for (std::size_t i : pick_coords(values.size(), options.max_coords_per_input, rng)) {
            const double original = values[i];
            std::uint64_t plus_print = 0;
            std::uint64_t minus_print = 0;
            values[i] = original + options.step;
            const double plus = evaluate(plus_print);
            values[i] = original - options.step;
            const double minus = evaluate(minus_print);
            values[i] = original;
            if (plus_print != base_print || minus_print != base_print) {
                ++report.skipped;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.grad_floor});
            report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_error <= options.tol;
    return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double step,
                                  double tol) {
    GradCheckOptions options;
    options.step = step;
    options.tol = tol;
    return finite_diff_check([&](const std::vector<Tensor>& xs) { return fn(xs[0]); }, {input}, options);
}

}  // namespace cornerdet
