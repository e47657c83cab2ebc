#include "polystyle/metrics.hpp"

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"

namespace polystyle {

ClassificationReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                           bool warn_on_zero_division) {
    if (y_true.size() != y_pred.size()) throw Error(Errc::LengthMismatch, "label and prediction counts differ");
    if (y_true.empty()) throw Error(Errc::EmptyDataset, "no labels to score");
    ClassificationReport r;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const bool t = y_true[i] == 1, p = y_pred[i] == 1;
        if (t && p) ++r.tp;
        else if (!t && p) ++r.fp;
        else if (t && !p) ++r.fn;
        else ++r.tn;
    }
    auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
        if (den == 0) {
            if (warn_on_zero_division) log::warn(std::string(name) + " is undefined; reporting 0");
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.accuracy = ratio(r.tp + r.tn, y_true.size(), "accuracy");
    r.precision = ratio(r.tp, r.tp + r.fp, "precision");
    r.recall = ratio(r.tp, r.tp + r.fn, "recall");
    r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, "f1");
    return r;
}

}  // namespace polystyle
