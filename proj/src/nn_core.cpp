#include "aeromtl/nn_core.hpp"

namespace aeromtl {

const char* to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::InvalidArgument: return "invalid-argument";
    case ErrorCategory::Config: return "config-error";
    case ErrorCategory::Parse: return "parse-error";
    case ErrorCategory::Schema: return "schema-error";
    case ErrorCategory::Degenerate: return "degenerate-dimension";
    case ErrorCategory::Infeasible: return "infeasible";
    case ErrorCategory::Numeric: return "numeric-error";
    case ErrorCategory::Io: return "io-error";
  }
  return "error";
}

std::string_view to_string(Activation activation) noexcept {
  switch (activation) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softmax: return "softmax";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softmax") return Activation::Softmax;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::Adam ? "adam" : "gd";
}

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "gd" || name == "sgd") return OptimizerKind::GradientDescent;
  if (name == "adam") return OptimizerKind::Adam;
  throw InvalidArgument("unknown optimizer '" + std::string(name) + "'");
}

}  // namespace aeromtl
