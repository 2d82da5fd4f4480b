#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "exnex/io.hpp"

namespace exnex::test {

inline std::filesystem::path source_dir() { return EXNEX_SOURCE_DIR; }

inline std::vector<AnimalStudy> shipped_animal_data()
{
    return load_animal_data(source_dir() / "data" / "animal_studies.csv", 5.0);
}

// Short serial chains for tests that only need a usable posterior.
inline SamplerSettings quick_sampler(std::uint64_t seed = 17)
{
    SamplerSettings s;
    s.n_chains = 2;
    s.n_iterations = 1500;
    s.n_burnin = 500;
    s.seed = seed;
    s.parallel_chains = false;
    s.compute_diagnostics = false;
    s.max_stored_draws = 2000;
    return s;
}

inline FullConfig quick_config()
{
    auto c = default_config();
    c.sampler = quick_sampler();
    c.simulation.sampler = quick_sampler();
    c.simulation.sampler.n_iterations = 800;
    c.simulation.sampler.n_burnin = 300;
    return c;
}

inline HumanTrialState empty_trial(const std::string& id, int max_n = 24)
{
    HumanTrialState t;
    t.subgroup_id = id;
    t.grid = DoseGrid({0.1, 0.5, 1.0, 5.0, 10.0, 20.0}, 5.0);
    t.max_sample_size = max_n;
    return t;
}

// A fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("exnex-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace exnex::test
