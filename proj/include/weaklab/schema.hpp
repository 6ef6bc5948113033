#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "weaklab/error.hpp"

namespace weaklab {

/// Entity-type inventory plus the prompt text blocks for one annotation task.
/// Types are ordered, unique, and case-sensitive.
struct TaskSchema {
  std::string task_id;
  std::vector<std::string> entity_types;
  std::string instruction;
  std::string system_prompt;

  bool has_type(std::string_view type) const {
    return std::find(entity_types.begin(), entity_types.end(), type) != entity_types.end();
  }
};

inline TaskSchema make_schema(std::string task_id, std::vector<std::string> entity_types,
                              std::string instruction, std::string system_prompt) {
  if (entity_types.empty())
    throw ConfigError("schema '" + task_id + "': entity_types must be non-empty");
  for (std::size_t i = 0; i < entity_types.size(); ++i)
    for (std::size_t j = i + 1; j < entity_types.size(); ++j)
      if (entity_types[i] == entity_types[j])
        throw ConfigError("schema '" + task_id + "': duplicate entity type '" +
                          entity_types[i] + "'");
  return TaskSchema{std::move(task_id), std::move(entity_types), std::move(instruction),
                    std::move(system_prompt)};
}

namespace detail {

inline constexpr std::string_view annotator_system_prompt =
    "You are a medical professional who has excellent medical knowledge and is happy to "
    "review and annotate medical notes.";

inline constexpr std::string_view output_contract =
    "\nThe output should have:"
    "\n1. the text of entity: entity"
    "\n2. the entity type: entity_type";

}  // namespace detail

inline std::vector<std::string> builtin_schema_ids() { return {"2012", "2014", "2018"}; }

/// Built-in schemas for the three benchmark tasks: 2012 temporal events,
/// 2014 de-identification (23 PHI subtypes), 2018 medications and ADEs.
inline TaskSchema builtin_schema(std::string_view task_id) {
  using detail::annotator_system_prompt;
  using detail::output_contract;
  if (task_id == "2012") {
    return make_schema(
        "2012", {"EVENT", "TIMEX3"},
        std::string("This is a named entity recognition task. Given a medical note, "
                    "annotate the events (EVENT) and time expressions (TIMEX3):") +
            std::string(output_contract),
        std::string(annotator_system_prompt));
  }
  if (task_id == "2014") {
    return make_schema(
        "2014",
        {"NAME_PATIENT",      "NAME_DOCTOR",
         "NAME_USERNAME",     "PROFESSION",
         "LOCATION_HOSPITAL", "LOCATION_ORGANIZATION",
         "LOCATION_STREET",   "LOCATION_CITY",
         "LOCATION_STATE",    "LOCATION_COUNTRY",
         "LOCATION_ZIP",      "LOCATION_LOCATION-OTHER",
         "AGE",               "DATE",
         "CONTACT_PHONE",     "CONTACT_FAX",
         "CONTACT_EMAIL",     "CONTACT_URL",
         "ID_BIOID",          "ID_DEVICE",
         "ID_HEALTHPLAN",     "ID_IDNUM",
         "ID_MEDICALRECORD"},
        std::string("This is a named entity recognition task. Given a medical note, "
                    "annotate the Protected Health Information (PHI):"
                    "\n1. NAME"
                    "\n - a. NAME_PATIENT"
                    "\n - b. NAME_DOCTOR"
                    "\n - c. NAME_USERNAME"
                    "\n2. PROFESSION"
                    "\n3. LOCATION"
                    "\n - a. LOCATION_HOSPITAL"
                    "\n - b. LOCATION_ORGANIZATION"
                    "\n - c. LOCATION_STREET"
                    "\n - d. LOCATION_CITY"
                    "\n - e. LOCATION_STATE"
                    "\n - f. LOCATION_COUNTRY"
                    "\n - g. LOCATION_ZIP"
                    "\n - h. LOCATION_LOCATION-OTHER"
                    "\n4. AGE"
                    "\n5. DATE"
                    "\n6. CONTACT"
                    "\n - a. CONTACT_PHONE"
                    "\n - b. CONTACT_FAX"
                    "\n - c. CONTACT_EMAIL"
                    "\n - d. CONTACT_URL"
                    "\n7. ID"
                    "\n - a. ID_BIOID"
                    "\n - b. ID_DEVICE"
                    "\n - c. ID_HEALTHPLAN"
                    "\n - d. ID_IDNUM"
                    "\n - e. ID_MEDICALRECORD") +
            std::string(output_contract),
        std::string(annotator_system_prompt));
  }
  if (task_id == "2018") {
    return make_schema(
        "2018",
        {"Drug", "Form", "Strength", "Frequency", "Route", "Dosage", "Reason", "ADE",
         "Duration"},
        std::string("This is a named entity recognition task. Given a medical note, "
                    "annotate the Drug, Form, Strength, Frequency, Route, Dosage, Reason, "
                    "ADE, and Duration.") +
            std::string(output_contract),
        std::string(annotator_system_prompt));
  }
  throw ConfigError("unknown benchmark task id: '" + std::string(task_id) +
                    "' (built-ins: 2012, 2014, 2018)");
}

}  // namespace weaklab
