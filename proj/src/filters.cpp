#include "subjectdiff/filters.hpp"

#include <algorithm>

#include "subjectdiff/error.hpp"

namespace sdiff::synth {

namespace {
std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}
}  // namespace

FilterDecision filter_sample(const SampleAnnotation& ann, const FilterRules& rules) {
    SDIFF_CHECK(ann.bbox_aspect > 0.0, ErrorKind::Input, "bbox_aspect must be positive");
    SDIFF_CHECK(ann.area_fraction >= 0.0 && ann.area_fraction <= 1.0, ErrorKind::Input,
                "area_fraction must be in [0,1]");
    if (ann.is_group) return {false, "group"};
    if (ann.is_inside) return {false, "inside"};
    if (ann.bbox_aspect > rules.max_aspect) return {false, "aspect"};
    if (ann.area_fraction > rules.max_area || ann.area_fraction < rules.min_area) return {false, "area"};
    std::string cls = lower(ann.class_label);
    for (const auto& h : rules.human_classes)
        if (cls == h) return {false, "human_class"};
    for (const auto& c : rules.cluttered_classes)
        if (cls == c) return {false, "cluttered_class"};
    return {true, ""};
}

}  // namespace sdiff::synth
