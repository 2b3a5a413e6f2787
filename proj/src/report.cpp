#include "persam/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "persam/errors.hpp"

namespace persam {

AttentionReport attention_report(const PersamModel& model, const Bag& bag,
                                 const std::string& record_source) {
    Rng rng(0);
    PersamForward f = model.forward(bag, rng, /*training=*/false);

    AttentionReport r;
    r.case_id = bag.case_id;
    r.record_source = record_source;
    const std::size_t l = f.attn.class_wise.rows();
    const std::size_t c = f.attn.class_wise.cols();
    r.class_wise.assign(l, std::vector<double>(c, 0.0));
    r.explanatory.assign(l, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            r.class_wise[i][j] = f.attn.class_wise.at(i, j);
            r.explanatory[i][j] = f.attn.explanatory.at(i, j);
        }
    r.exploratory = f.attn.exploratory.data();
    r.class_clinical = f.attn.class_clinical.data();
    r.probs = f.probs.data();
    for (std::size_t m = 0; m < f.enc.encoded.num_factors; ++m)
        r.clinical_to_patch.push_back(
            clinical_to_patch_attention(f.enc.attention, f.enc.encoded, m));

    r.grid_cols = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(l))));
    r.grid_rows = (l + r.grid_cols - 1) / r.grid_cols;
    return r;
}

std::uint8_t quantize_attention(double a) {
    const double v = std::lround(255.0 * std::min(1.0, std::max(0.0, a)));
    return static_cast<std::uint8_t>(v);
}

std::vector<std::uint8_t> rasterize(const std::vector<double>& values, std::size_t rows,
                                    std::size_t cols) {
    std::vector<std::uint8_t> px(rows * cols, 0);
    for (std::size_t i = 0; i < values.size() && i < px.size(); ++i)
        px[i] = quantize_attention(values[i]);
    return px;
}

void write_pgm(const std::vector<std::uint8_t>& pixels, std::size_t rows, std::size_t cols,
               const std::string& path) {
    if (pixels.size() != rows * cols)
        throw ShapeError("write_pgm: " + std::to_string(pixels.size()) + " pixels for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open " + path + " for writing");
    f << "P5\n" << cols << " " << rows << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

namespace {

void csv_matrix(std::ofstream& f, const char* kind,
                const std::vector<std::vector<double>>& m) {
    char buf[32];
    for (std::size_t i = 0; i < m.size(); ++i) {
        f << kind << "," << i;
        for (double v : m[i]) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            f << "," << buf;
        }
        f << "\n";
    }
}

void csv_vector(std::ofstream& f, const char* kind, const std::vector<double>& v) {
    char buf[32];
    f << kind << ",0";
    for (double x : v) {
        std::snprintf(buf, sizeof(buf), "%.6f", x);
        f << "," << buf;
    }
    f << "\n";
}

}  // namespace

void write_report_csv(const AttentionReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open " + path + " for writing");
    f << "# case " << report.case_id << " record " << report.record_source << "\n";
    csv_matrix(f, "class_wise", report.class_wise);
    csv_vector(f, "exploratory", report.exploratory);
    csv_vector(f, "class_clinical", report.class_clinical);
    csv_matrix(f, "explanatory", report.explanatory);
    csv_matrix(f, "clinical_to_patch", report.clinical_to_patch);
    csv_vector(f, "probs", report.probs);
}

std::vector<std::string> write_report_outputs(const AttentionReport& report,
                                              const std::string& dir,
                                              const std::string& stem) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto emit_pgm = [&](const std::vector<double>& values, const std::string& name) {
        const std::string fname = stem + "_" + name + ".pgm";
        write_pgm(rasterize(values, report.grid_rows, report.grid_cols), report.grid_rows,
                  report.grid_cols, (fs::path(dir) / fname).string());
        files.push_back(fname);
    };

    const std::string csv_name = stem + ".csv";
    write_report_csv(report, (fs::path(dir) / csv_name).string());
    files.push_back(csv_name);

    emit_pgm(report.exploratory, "exploratory");
    const std::size_t classes = report.class_clinical.size();
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> col(report.class_wise.size());
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = report.class_wise[i][c];
        emit_pgm(col, "class_wise_c" + std::to_string(c));
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = report.explanatory[i][c];
        emit_pgm(col, "explanatory_c" + std::to_string(c));
    }
    for (std::size_t m = 0; m < report.clinical_to_patch.size(); ++m)
        emit_pgm(report.clinical_to_patch[m], "clinical_to_patch_m" + std::to_string(m));
    return files;
}

void write_output_manifest(const std::string& dir, const std::vector<std::string>& files) {
    nlohmann::json j;
    j["files"] = files;
    std::ofstream f(std::filesystem::path(dir) / "manifest.json", std::ios::binary);
    f << j.dump(2) << "\n";
}

}  // namespace persam
