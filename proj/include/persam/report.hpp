#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "persam/model.hpp"

namespace persam {

// Everything the attention export emits for one (bag, clinical record) input.
struct AttentionReport {
    int case_id = -1;
    std::string record_source;  // "original", "case-<id>", or "class-<c>"
    std::vector<std::vector<double>> class_wise;        // L x C
    std::vector<double> exploratory;                    // L
    std::vector<double> class_clinical;                 // C
    std::vector<std::vector<double>> explanatory;       // L x C
    std::vector<std::vector<double>> clinical_to_patch; // M x L
    std::vector<double> probs;                          // C
    std::size_t grid_rows = 0, grid_cols = 0;           // heatmap raster layout
};

AttentionReport attention_report(const PersamModel& model, const Bag& bag,
                                 const std::string& record_source);

// round(255 * a), clamped to [0, 255]
std::uint8_t quantize_attention(double a);

// 8-bit binary portable graymap, one pixel per value.
void write_pgm(const std::vector<std::uint8_t>& pixels, std::size_t rows, std::size_t cols,
               const std::string& path);

// Lays out per-patch values on the report's grid (row-major, zero padded).
std::vector<std::uint8_t> rasterize(const std::vector<double>& values, std::size_t rows,
                                    std::size_t cols);

void write_report_csv(const AttentionReport& report, const std::string& path);

// CSV + one PGM per attention map; returns the file names written (relative
// to dir).
std::vector<std::string> write_report_outputs(const AttentionReport& report,
                                              const std::string& dir,
                                              const std::string& stem);

void write_output_manifest(const std::string& dir, const std::vector<std::string>& files);

}  // namespace persam
