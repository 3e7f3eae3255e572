#pragma once

#include <stdexcept>
#include <string>

namespace ul {

// Error classes are stable strings surfaced by the CLI:
//   contract  - precondition / shape / finiteness violation
//   config    - bad config file or flag value
//   io        - file missing, unreadable, or malformed
//   gate      - a pipeline sanity gate failed (e.g. learnability)
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error(msg), cls_(std::move(cls)) {}
  const std::string& cls() const { return cls_; }

 private:
  std::string cls_;
};

[[noreturn]] inline void fail(const char* cls, const std::string& msg) {
  throw Error(cls, msg);
}

}  // namespace ul

#define UL_CHECK(cond, cls, msg)          \
  do {                                    \
    if (!(cond)) ::ul::fail(cls, (msg));  \
  } while (0)
