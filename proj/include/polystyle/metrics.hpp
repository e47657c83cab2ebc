#pragma once

#include <cstddef>
#include <span>

namespace polystyle {

struct ClassificationReport {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Binary metrics with label 1 as the positive class. A metric whose
/// denominator is zero is reported as 0 (with a warning).
ClassificationReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                           bool warn_on_zero_division = true);

}  // namespace polystyle
