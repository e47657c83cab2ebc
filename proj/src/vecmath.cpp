#include "polystyle/vecmath.hpp"

namespace polystyle {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::ZeroNormVector: return "ZeroNormVector";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::NonFiniteValue: return "NonFiniteValue";
        case Errc::InsufficientData: return "InsufficientData";
        case Errc::DegenerateCovariance: return "DegenerateCovariance";
        case Errc::MalformedLine: return "MalformedLine";
        case Errc::SchemaViolation: return "SchemaViolation";
        case Errc::DuplicateId: return "DuplicateId";
        case Errc::MissingFile: return "MissingFile";
        case Errc::ProviderUnavailable: return "ProviderUnavailable";
        case Errc::AuthError: return "AuthError";
        case Errc::DimMismatch: return "DimMismatch";
        case Errc::MissingFixture: return "MissingFixture";
        case Errc::ConfigInvalid: return "ConfigInvalid";
        case Errc::NoSpeakerData: return "NoSpeakerData";
        case Errc::InconsistentInput: return "InconsistentInput";
        case Errc::NoValidTriplets: return "NoValidTriplets";
        case Errc::TooFewPairs: return "TooFewPairs";
        case Errc::InvalidMargin: return "InvalidMargin";
        case Errc::EmptyDataset: return "EmptyDataset";
        case Errc::DivergedLoss: return "DivergedLoss";
        case Errc::EmptyNode: return "EmptyNode";
        case Errc::SingleClassInput: return "SingleClassInput";
        case Errc::UnfittedModel: return "UnfittedModel";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::EmptyGroup: return "EmptyGroup";
        case Errc::EmptyCandidates: return "EmptyCandidates";
    }
    return "Unknown";
}

namespace {

void fix_sign(Vector& v) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    }
    if (v[arg] < 0) v = -v;
}

// Some unit vector orthogonal to `against`, used when the deflated matrix is
// numerically zero (rank-deficient data).
Vector orthogonal_fallback(const Vector& against) {
    const Eigen::Index d = against.size();
    Vector candidate = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = -1; i < d; ++i) {
        if (i >= 0) candidate = Vector::Unit(d, i);
        Vector r = candidate - against.dot(candidate) * against;
        if (r.norm() > 1e-6) return r.normalized();
    }
    return Vector::Unit(d, 0);
}

struct EigenPair {
    double value = 0.0;
    Vector vector;
};

EigenPair dominant_eigenpair(const Matrix& cov, const Vector* orthogonal_to,
                             const PowerIterationOptions& opts) {
    const Eigen::Index d = cov.rows();
    Vector v = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
    if (orthogonal_to) {
        v -= orthogonal_to->dot(v) * *orthogonal_to;
        if (v.norm() < 1e-12) v = orthogonal_fallback(*orthogonal_to);
        v.normalize();
    }
    double lambda = v.dot(cov * v);
    for (int it = 0; it < opts.max_iterations; ++it) {
        Vector w = cov * v;
        if (orthogonal_to) w -= orthogonal_to->dot(w) * *orthogonal_to;
        const double wn = w.norm();
        if (!(wn > 0.0)) {
            return {0.0, orthogonal_to ? orthogonal_fallback(*orthogonal_to) : v};
        }
        Vector next = w / wn;
        const double next_lambda = next.dot(cov * next);
        const double change = std::abs(next_lambda - lambda);
        const double step = (next - v).norm();
        v = std::move(next);
        lambda = next_lambda;
        // The Rayleigh quotient converges quadratically faster than the
        // vector itself, so the vector step is checked as well.
        if (change <= opts.relative_tolerance * std::abs(lambda) &&
            step <= opts.relative_tolerance * 10.0) {
            break;
        }
    }
    return {std::max(lambda, 0.0), v};
}

}  // namespace

Projection2D pca_project(std::span<const Vector> vs, const PowerIterationOptions& opts) {
    if (vs.size() < 3) {
        throw Error(Errc::InsufficientData, "PCA needs at least 3 vectors, got " +
                                                std::to_string(vs.size()));
    }
    const Eigen::Index dim = vs.front().size();
    if (dim < 2) {
        throw Error(Errc::InsufficientData, "PCA needs dimension >= 2");
    }
    const Eigen::Index n = static_cast<Eigen::Index>(vs.size());
    Matrix data(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        detail::require_same_dim(vs.front(), vs[static_cast<std::size_t>(i)]);
        data.row(i) = vs[static_cast<std::size_t>(i)].transpose();
    }

    Projection2D out;
    out.mean = data.colwise().mean().transpose();
    Matrix centered = data.rowwise() - out.mean.transpose();
    const double scale = std::max(1.0, data.cwiseAbs().maxCoeff());
    if (centered.cwiseAbs().maxCoeff() <= 1e-12 * scale) {
        throw Error(Errc::DegenerateCovariance, "all points are identical");
    }
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

    EigenPair first = dominant_eigenpair(cov, nullptr, opts);
    fix_sign(first.vector);
    const Matrix deflated = cov - first.value * first.vector * first.vector.transpose();
    EigenPair second = dominant_eigenpair(deflated, &first.vector, opts);
    fix_sign(second.vector);

    out.components.resize(dim, 2);
    out.components.col(0) = first.vector;
    out.components.col(1) = second.vector;
    out.explained_variance = {first.value, std::min(second.value, first.value)};
    out.points = centered * out.components;
    return out;
}

}  // namespace polystyle
