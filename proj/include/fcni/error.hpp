#pragma once

#include <stdexcept>
#include <string>

namespace fcni {

enum class ErrorKind { invalid_input, config, dataset, io, training, generation };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_input(const std::string& msg) { return Error(ErrorKind::invalid_input, msg); }
inline Error config_error(const std::string& msg) { return Error(ErrorKind::config, msg); }
inline Error dataset_error(const std::string& msg) { return Error(ErrorKind::dataset, msg); }
inline Error io_error(const std::string& msg) { return Error(ErrorKind::io, msg); }
inline Error training_error(const std::string& msg) { return Error(ErrorKind::training, msg); }
inline Error generation_error(const std::string& msg) { return Error(ErrorKind::generation, msg); }

}  // namespace fcni
