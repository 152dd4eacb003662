#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subjectdiff/tensor.hpp"

namespace sdiff::synth {

struct SampleAnnotation {
    std::string class_label;
    bool is_group = false;
    bool is_inside = false;
    real bbox_aspect = 1.0;   // > 0
    real area_fraction = 0.5; // in [0,1]
};

struct FilterRules {
    real max_aspect = 2.0;
    real max_area = 0.8;
    real min_area = 0.3;
    std::vector<std::string> human_classes{
        "boy", "girl", "person", "man", "mammal", "woman", "human body", "human head", "human hair",
        "human arm", "human face", "human leg", "human hand", "human foot", "human eye", "human mouth",
        "human nose", "human ear", "clothing", "suit"};
    std::vector<std::string> cluttered_classes{"tree", "plant", "houseplant", "desk", "table", "poster",
                                               "billboard"};
};

struct FilterDecision {
    bool keep = true;
    std::string reason;  // first violated rule: group|inside|aspect|area|human_class|cluttered_class
};

// rules evaluated in fixed order: group, inside, aspect, area, human, cluttered
FilterDecision filter_sample(const SampleAnnotation& ann, const FilterRules& rules = {});

}  // namespace sdiff::synth
