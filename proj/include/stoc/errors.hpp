#pragma once

#include <stdexcept>
#include <string>

namespace stoc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Problem validation
struct NonFiniteCallback : Error { using Error::Error; };
struct CoercivityViolation : Error { using Error::Error; };
struct RecessionMismatch : Error { using Error::Error; };

// Relaxation checks
struct HomogeneityViolation : Error { using Error::Error; };
struct ConvexityViolation : Error { using Error::Error; };

// Trajectories
struct NonFiniteState : Error { using Error::Error; };
struct DegeneratePath : Error { using Error::Error; };
struct NonMonotonePhi : Error { using Error::Error; };

// Solver
struct NonFiniteEnergy : Error { using Error::Error; };
struct InfeasibleTimeBudget : Error { using Error::Error; };
struct BoundViolation : Error { using Error::Error; };
struct NotNormalized : Error { using Error::Error; };

// Measures
struct MeanMismatch : Error { using Error::Error; };

// CLI / configuration
struct ConfigError : Error { using Error::Error; };

}  // namespace stoc
