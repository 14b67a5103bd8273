#pragma once

#include "fairstep/cohort.hpp"
#include "fairstep/metrics.hpp"
#include "fairstep/ols.hpp"
#include "fairstep/stepwise.hpp"
#include "fairstep/synthpop.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <ostream>

namespace fairstep {

/// Reads and parses a JSON file; parse failures become ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

nlohmann::json to_json(const VariableId& v);
VariableId parse_variable(const nlohmann::json& j);

/// A formula is a top-level array of {"kind", "key"} objects.
nlohmann::json to_json(const Formula& f);
Formula parse_formula(const nlohmann::json& j);

/// A pool is an array of {"label", "variables"}; variables may be HCC id
/// strings or {"kind", "key"} objects.
nlohmann::json to_json(const CandidatePool& pool);
CandidatePool parse_pool(const nlohmann::json& j);

nlohmann::json to_json(const EvaluationMode& mode);
EvaluationMode parse_evaluation_mode(const nlohmann::json& j);
nlohmann::json to_json(const Objective& objective);
Objective parse_objective(const nlohmann::json& j);
nlohmann::json to_json(const SelectionPolicy& policy);
SelectionPolicy parse_policy(const nlohmann::json& j);

nlohmann::json to_json(const ExclusionReport& report);
nlohmann::json to_json(const FitResult& fit);
nlohmann::json to_json(const GroupMetrics& g);
nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const StepAction& action);
StepAction parse_action(const nlohmann::json& j);
nlohmann::json to_json(const StepDeltas& deltas);
nlohmann::json to_json(const TraceEntry& entry);
nlohmann::json to_json(const DecisionTrace& trace);
/// Restores baseline, actions and decisions; per-step reports are not read back.
DecisionTrace parse_trace(const nlohmann::json& j);
nlohmann::json to_json(const StepwiseRun& run);
nlohmann::json to_json(const DivergenceReport& report);
nlohmann::json to_json(const CalibrationSummary& summary);
nlohmann::json to_json(const std::vector<TargetCheck>& checks);

/// One row per group: formula label, r2, adj_r2, group metrics.
void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& reports);
/// One row per trace entry and group.
void write_trace_csv(std::ostream& out, const DecisionTrace& trace);
/// Graphviz rendering: accepted steps form the main path, rejected
/// candidates hang off it as dashed edges.
void write_trace_dot(std::ostream& out, const DecisionTrace& trace, const std::string& focus_group = {});

} // namespace fairstep
