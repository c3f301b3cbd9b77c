#pragma once

#include <stdexcept>
#include <string>

namespace mvflow {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// A normalizer vanished: eta(G) = 0 where a Boltzmann-Gibbs transform or a
/// mass update needed eta(G) > 0. For filters this signals extinction of the
/// flow; recovery policy is left to the caller.
class extinction_error : public error {
public:
    explicit extinction_error(const std::string& what) : error(what) {}
};

/// A parameter is outside its admissible range (selection epsilon, rate
/// bounds, contraction-composition hypotheses, ...).
class parameter_error : public error {
public:
    explicit parameter_error(const std::string& what) : error(what) {}
};

/// Mismatched state-space sizes or incompatible measure/kernel shapes.
class dimension_error : public error {
public:
    explicit dimension_error(const std::string& what) : error(what) {}
};

/// A value could not be evaluated on the support of a measure.
class domain_error : public error {
public:
    explicit domain_error(const std::string& what) : error(what) {}
};

/// A model spec failed validation against its preconditions.
class validation_error : public error {
public:
    explicit validation_error(const std::string& what) : error(what) {}
};

}  // namespace mvflow
