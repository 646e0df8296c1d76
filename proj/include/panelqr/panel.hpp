#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/error.hpp"

namespace panelqr {

/// Quantile level tau, strictly inside (0, 1).
class QuantileLevel {
public:
    explicit QuantileLevel(double tau) : tau_(tau) {
        if (!(tau > 0.0 && tau < 1.0))
            throw Error(ErrorKind::InvalidArgument, "quantile level must lie in (0,1), got " + std::to_string(tau));
    }
    double value() const noexcept { return tau_; }
    friend bool operator==(const QuantileLevel&, const QuantileLevel&) = default;

private:
    double tau_;
};

/// Strictly positive per-unit weights omega_i.
class WeightVector {
public:
    explicit WeightVector(std::vector<double> omega) : omega_(std::move(omega)) {
        if (omega_.empty()) throw Error(ErrorKind::InvalidArgument, "weight vector is empty");
        for (double w : omega_)
            if (!(std::isfinite(w) && w > 0.0))
                throw Error(ErrorKind::InvalidArgument, "weights must be finite and strictly positive");
    }

    static WeightVector ones(std::size_t n) { return WeightVector(std::vector<double>(n, 1.0)); }

    std::size_t size() const noexcept { return omega_.size(); }
    double operator[](std::size_t i) const noexcept { return omega_[i]; }
    std::span<const double> values() const noexcept { return omega_; }
    double max() const noexcept {
        double m = 0.0;
        for (double w : omega_) m = w > m ? w : m;
        return m;
    }

private:
    std::vector<double> omega_;
};

/// Balanced panel of n units observed over T periods with p covariates.
///
/// Observations are stored unit-major: row k = i*T + t. The response is a
/// length-nT vector and the covariates an (nT x p) column-major matrix. The
/// intercept block is implicit; it is never materialised.
class PanelDataset {
public:
    PanelDataset(std::size_t n, std::size_t T, Eigen::VectorXd y, Eigen::MatrixXd X,
                 std::vector<std::string> unit_labels = {}, std::vector<std::string> time_labels = {},
                 std::vector<std::string> covariate_names = {})
        : n_(n), T_(T), y_(std::move(y)), X_(std::move(X)), unit_labels_(std::move(unit_labels)),
          time_labels_(std::move(time_labels)), covariate_names_(std::move(covariate_names)) {
        if (n_ == 0 || T_ == 0) throw Error(ErrorKind::InvalidArgument, "panel needs n >= 1 and T >= 1");
        const auto N = static_cast<Eigen::Index>(n_ * T_);
        if (y_.size() != N)
            throw Error(ErrorKind::UnbalancedPanel, "response has " + std::to_string(y_.size()) +
                                                        " cells, expected n*T = " + std::to_string(N));
        if (X_.cols() > 0 && X_.rows() != N)
            throw Error(ErrorKind::UnbalancedPanel, "covariates have " + std::to_string(X_.rows()) +
                                                        " rows, expected n*T = " + std::to_string(N));
        if (X_.cols() == 0) X_.resize(N, 0);
        if (!y_.allFinite() || !X_.allFinite())
            throw Error(ErrorKind::InvalidArgument, "panel contains non-finite entries");

        if (unit_labels_.empty())
            for (std::size_t i = 0; i < n_; ++i) unit_labels_.push_back(std::to_string(i + 1));
        if (time_labels_.empty())
            for (std::size_t t = 0; t < T_; ++t) time_labels_.push_back(std::to_string(t + 1));
        if (covariate_names_.empty())
            for (Eigen::Index j = 0; j < X_.cols(); ++j) covariate_names_.push_back("x" + std::to_string(j + 1));
        if (unit_labels_.size() != n_ || time_labels_.size() != T_ ||
            covariate_names_.size() != static_cast<std::size_t>(X_.cols()))
            throw Error(ErrorKind::DimensionMismatch, "label vectors do not match panel dimensions");
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t T() const noexcept { return T_; }
    std::size_t p() const noexcept { return static_cast<std::size_t>(X_.cols()); }
    std::size_t observations() const noexcept { return n_ * T_; }

    std::size_t index(std::size_t i, std::size_t t) const noexcept { return i * T_ + t; }
    double y(std::size_t i, std::size_t t) const noexcept { return y_[static_cast<Eigen::Index>(index(i, t))]; }
    double x(std::size_t i, std::size_t t, std::size_t j) const noexcept {
        return X_(static_cast<Eigen::Index>(index(i, t)), static_cast<Eigen::Index>(j));
    }

    const Eigen::VectorXd& response() const noexcept { return y_; }
    const Eigen::MatrixXd& covariates() const noexcept { return X_; }
    const std::vector<std::string>& unit_labels() const noexcept { return unit_labels_; }
    const std::vector<std::string>& time_labels() const noexcept { return time_labels_; }
    const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

    /// Same covariates and labels, different response.
    PanelDataset with_response(Eigen::VectorXd y) const {
        return PanelDataset(n_, T_, std::move(y), X_, unit_labels_, time_labels_, covariate_names_);
    }
    PanelDataset with_covariates(Eigen::MatrixXd X) const {
        std::vector<std::string> names = static_cast<Eigen::Index>(covariate_names_.size()) == X.cols()
                                             ? covariate_names_
                                             : std::vector<std::string>{};
        return PanelDataset(n_, T_, y_, std::move(X), unit_labels_, time_labels_, std::move(names));
    }

private:
    std::size_t n_;
    std::size_t T_;
    Eigen::VectorXd y_;
    Eigen::MatrixXd X_;
    std::vector<std::string> unit_labels_;
    std::vector<std::string> time_labels_;
    std::vector<std::string> covariate_names_;
};

} // namespace panelqr
