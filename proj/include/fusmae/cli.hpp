#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fusmae/common.hpp"

namespace fusmae::cli {

// Exit code contract, stable for scripting.
enum ExitCode : int {
    exit_ok = 0,
    exit_check_failed = 1,
    exit_usage = 2,
    exit_numeric_abort = 3,
};

// Flat flag set with "flags > config file > defaults" precedence. Flags are
// --key value pairs; a config file holds the same keys as key=value lines.
class Flags {
public:
    static Flags parse(int argc, const char* const* argv, int start);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string require(const std::string& key) const;

    // every key must have been read by the command; leftovers are usage errors
    void reject_unknown() const;

    // resolved settings for the run_config.txt replay file
    const std::vector<std::pair<std::string, std::string>>& resolved() const { return resolved_; }

private:
    void note(const std::string& key, const std::string& value) const;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
    mutable std::vector<std::pair<std::string, std::string>> resolved_;
};

int cmd_gen_data(const Flags& flags);
int cmd_pretrain(const Flags& flags);
int cmd_probe(const Flags& flags);
int cmd_finetune(const Flags& flags);
int cmd_inspect_attention(const Flags& flags);
int cmd_grad_check(const Flags& flags);
int cmd_bench(const Flags& flags);

int dispatch(int argc, const char* const* argv);
std::string default_out_root();

}  // namespace fusmae::cli
