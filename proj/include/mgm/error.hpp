#pragma once

#include <stdexcept>
#include <string>

namespace mgm {

// Every error carries a short machine-parsable category; the CLI prints it
// as the first token of its one-line failure report.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define MGM_DEFINE_ERROR(Name, tag)                                          \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(tag, what) {}         \
    };

MGM_DEFINE_ERROR(ShapeError, "shape")
MGM_DEFINE_ERROR(PreconditionError, "precondition")
MGM_DEFINE_ERROR(TrainingError, "training")
MGM_DEFINE_ERROR(IngestionError, "ingestion")
MGM_DEFINE_ERROR(ConfigError, "config")
MGM_DEFINE_ERROR(DomainError, "domain")
MGM_DEFINE_ERROR(GenerationError, "generation")
MGM_DEFINE_ERROR(PredictionError, "prediction")
MGM_DEFINE_ERROR(PipelineError, "pipeline")
MGM_DEFINE_ERROR(FitError, "fit")
MGM_DEFINE_ERROR(IoError, "io")

#undef MGM_DEFINE_ERROR

}  // namespace mgm
