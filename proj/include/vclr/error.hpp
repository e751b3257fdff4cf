#pragma once

#include <stdexcept>
#include <string>

namespace vclr {

// Exit-code aligned error categories. Every error the library raises derives
// from Error so the CLI can map it to a process exit status.
enum class ErrorKind { Usage = 2, Data = 3, Numeric = 4, Shape = 5, Domain = 6 };

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorKind::Shape, w) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorKind::Domain, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& w) : Error(ErrorKind::Usage, w) {}
};
struct NumericAbort : Error {
    explicit NumericAbort(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};

}  // namespace vclr
