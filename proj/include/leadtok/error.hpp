#pragma once

// Error types shared by every leadtok module. All errors derive from
// leadtok::Error so callers can catch the family or a specific variant.

#include <cstddef>
#include <stdexcept>
#include <string>

namespace leadtok {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- trace / file formats -------------------------------------------------

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": malformed JSON: " + what),
        line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class SchemaViolation : public Error {
 public:
  SchemaViolation(std::size_t line_no, std::string field, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": field '" + field + "': " + what),
        line_no_(line_no),
        field_(std::move(field)) {}
  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_no_;
  std::string field_;
};

class IoFailure : public Error {
 public:
  using Error::Error;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---- segmentation ---------------------------------------------------------

class UnalignedStep : public Error {
 public:
  explicit UnalignedStep(std::size_t ordinal)
      : Error("step " + std::to_string(ordinal) + " has no token span"), ordinal_(ordinal) {}
  std::size_t ordinal() const noexcept { return ordinal_; }

 private:
  std::size_t ordinal_;
};

class AlignmentMismatch : public Error {
 public:
  using Error::Error;
};

// ---- classification / statistics ------------------------------------------

class JudgeUnparseable : public Error {
 public:
  explicit JudgeUnparseable(std::string raw)
      : Error("judge reply has no yes/no <answer> tag: " + raw.substr(0, 200)), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

class KeyMismatch : public Error {
 public:
  using Error::Error;
};

class MissingClass : public Error {
 public:
  explicit MissingClass(const std::string& word)
      : Error("word '" + word + "' is missing from one of the reflection classes"), word_(word) {}
  const std::string& word() const noexcept { return word_; }

 private:
  std::string word_;
};

// ---- suppression / generation ---------------------------------------------

class AllMassRemoved : public Error {
 public:
  AllMassRemoved() : Error("suppression removed the entire probability mass") {}
};

class MaxTokensExceeded : public Error {
 public:
  explicit MaxTokensExceeded(std::size_t max_tokens)
      : Error("generation did not finish within " + std::to_string(max_tokens) + " tokens"),
        max_tokens_(max_tokens) {}
  std::size_t max_tokens() const noexcept { return max_tokens_; }

 private:
  std::size_t max_tokens_;
};

class EndpointError : public Error {
 public:
  using Error::Error;
};

class CapabilityMissing : public Error {
 public:
  using Error::Error;
};

class ScriptInvalid : public Error {
 public:
  using Error::Error;
};

// ---- evaluation -----------------------------------------------------------

class NoAnswerFound : public Error {
 public:
  NoAnswerFound() : Error("no boxed answer or number in response") {}
};

class CountMismatch : public Error {
 public:
  CountMismatch(const std::string& id, std::size_t got, std::size_t want)
      : Error("question " + id + " has " + std::to_string(got) + " responses, expected " +
              std::to_string(want)) {}
};

class DatasetMismatch : public Error {
 public:
  explicit DatasetMismatch(const std::string& tag) : Error("dataset mismatch: " + tag), tag_(tag) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

}  // namespace leadtok
