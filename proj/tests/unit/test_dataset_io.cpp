#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "icodec/dataset_io.hpp"
#include "icodec/error.hpp"

using namespace icodec;
namespace fs = std::filesystem;

TEST_CASE("records round trip through the line format") {
    const auto records = io::generate_dataset(200, 0.5, toyworld::Phase::instruct, 9);
    for (const auto& r : records) {
        CHECK(r.labeled);
        CHECK(io::from_line(io::to_line(r)) == r);
    }
    io::Record unlabeled;
    unlabeled.instruction.tokens = records[0].instruction.tokens;
    unlabeled.grid = records[0].grid;
    CHECK(io::from_line(io::to_line(unlabeled)) == unlabeled);
}

TEST_CASE("generation is seeded and phase aware") {
    const auto a = io::generate_dataset(100, 0.3, toyworld::Phase::pretrain, 1);
    CHECK(a.size() == 100);
    CHECK(a == io::generate_dataset(100, 0.3, toyworld::Phase::pretrain, 1));
    for (const auto& r : a) CHECK_FALSE(toyworld::has_attribute_tokens(r.instruction.tokens));
    const auto all_l1 = io::generate_dataset(50, 1.0, toyworld::Phase::stress, 2);
    for (const auto& r : all_l1) {
        CHECK(r.instruction.attributes.language == toyworld::Language::L1);
        CHECK(toyworld::has_stress_tokens(r.instruction.tokens));
    }
}

TEST_CASE("files are byte identical for the same seed") {
    const fs::path dir = fs::temp_directory_path() / "icodec_io_test";
    fs::create_directories(dir);
    io::write_records(dir / "a.txt", io::generate_dataset(30, 0.5, toyworld::Phase::instruct, 4));
    io::write_records(dir / "b.txt", io::generate_dataset(30, 0.5, toyworld::Phase::instruct, 4));
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(io::read_records(dir / "a.txt").size() == 30);
    fs::remove_all(dir);
}

TEST_CASE("malformed records are rejected") {
    const std::string good = io::to_line(io::generate_dataset(1, 0.0, toyworld::Phase::instruct, 0)[0]);
    CHECK_THROWS_AS(io::from_line("{"), Error);
    CHECK_THROWS_AS(io::from_line("{}"), Error);
    std::string wrong_version = good;
    wrong_version.replace(wrong_version.find("\"v\":1"), 5, "\"v\":9");
    CHECK_THROWS_AS(io::from_line(wrong_version), Error);
    std::string bad_frames = good;
    const auto at = bad_frames.find("\"frames\":");
    bad_frames.insert(at + 9, "1");
    CHECK_THROWS_AS(io::from_line(bad_frames), Error);
    CHECK_THROWS_AS(io::read_records("/nonexistent/records.txt"), Error);
}
