#include "leafnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace leafnet {

bool GradCheckReport::passed() const { return failures().empty(); }

double GradCheckReport::max_error() const {
    double m = 0.0;
    for (const auto& e : entries) {
        m = std::max(m, e.max_rel_error);
    }
    return m;
}

std::vector<std::string> GradCheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (!(e.max_rel_error <= tolerance)) {
            out.push_back(e.group);
        }
    }
    return out;
}

GradCheckReport check_gradients(std::span<const GradTarget> targets,
                                const std::function<double()>& loss,
                                const GradCheckOptions& options) {
    GradCheckReport report;
    report.tolerance = options.tolerance;
    SeededRng rng(options.seed);
    const double h = options.step;

    auto entry_for = [&](const std::string& group) -> GradCheckEntry& {
        for (auto& e : report.entries) {
            if (e.group == group) {
                return e;
            }
        }
        report.entries.push_back({group, 0.0, 0, ""});
        return report.entries.back();
    };

    for (const GradTarget& t : targets) {
        if (t.value->shape() != t.grad->shape()) {
            throw DimensionError("grad check: " + t.name + " value " + shape_str(t.value->shape()) +
                                 " vs gradient " + shape_str(t.grad->shape()));
        }
        std::vector<std::size_t> coords(t.value->size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(coords));
        coords.resize(std::min(coords.size(), options.coords_per_tensor));

        GradCheckEntry& entry = entry_for(t.group);
        for (std::size_t c : coords) {
            double& v = (*t.value)[c];
            const double saved = v;
            v = saved + h;
            const double up = loss();
            v = saved - h;
            const double down = loss();
            v = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = (*t.grad)[c];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            const double rel = std::abs(analytic - numeric) / denom;
            ++entry.coords;
            if (!(rel <= entry.max_rel_error)) {
                entry.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
                entry.worst = t.name + "[" + std::to_string(c) + "]";
            }
        }
    }
    return report;
}

GradCheckReport grad_check(SequentialModel<double>& model, const Tensor<double>& inputs,
                           std::span<const std::int32_t> labels, const GradCheckOptions& options) {
    SoftmaxLogLoss<double> loss;
    Tensor<double> x = inputs;
    loss.forward(model.forward(x, true), labels);
    const Tensor<double> input_grad = model.backward(loss.backward());

    std::vector<ParamRef<double>> params = model.parameters();
    // Gradients are copied so later forward passes cannot disturb them.
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size() + 1);
    std::vector<GradTarget> targets;
    for (const ParamRef<double>& p : params) {
        analytic.push_back(*p.grad);
    }
    analytic.push_back(input_grad);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].name;
        const std::string group = name.substr(0, name.rfind('.'));
        targets.push_back({group, name, params[i].value, &analytic[i]});
    }
    targets.push_back({"input", "input", &x, &analytic.back()});

    SoftmaxLogLoss<double> probe;
    return check_gradients(
        targets, [&] { return probe.forward(model.forward(x, true), labels); }, options);
}

} // namespace leafnet
