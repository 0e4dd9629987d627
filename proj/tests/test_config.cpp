#include "doctest.h"

#include "xoftr/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace xoftr;

namespace {

std::string write_temp_config(const std::string& name, const std::string& text) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << text;
    return path.string();
}

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("toy profile carries the documented matching defaults") {
    const RunConfig cfg = default_config("toy");
    CHECK(cfg.tau == doctest::Approx(0.1));
    CHECK(cfg.theta_c == doctest::Approx(0.3));
    CHECK(cfg.theta_f == doctest::Approx(0.1));
    CHECK(cfg.lambda_c == doctest::Approx(0.5));
    CHECK(cfg.lambda_f == doctest::Approx(0.3));
    CHECK(cfg.lambda_sub == doctest::Approx(1e4));
    CHECK(cfg.focal_alpha == doctest::Approx(0.25));
    CHECK(cfg.focal_gamma == doctest::Approx(2.0));
    CHECK(cfg.mask_ratio == doctest::Approx(0.5));
    CHECK(cfg.use_pretrain);
    CHECK(cfg.use_augment);
    CHECK_FALSE(cfg.one_to_one_only);
    CHECK(cfg.use_sprm);
    CHECK(cfg.use_theta_f);
    CHECK(cfg.use_positional_bias);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("paper profile widens the network") {
    const RunConfig cfg = default_config("paper");
    CHECK(cfg.c2 == 64);
    CHECK(cfg.c4 == 128);
    CHECK(cfg.c8 == 256);
    CHECK(cfg.coarse_layers == 4);
    CHECK(cfg.heads == 8);
    // thresholds are profile-independent
    CHECK(cfg.theta_c == doctest::Approx(0.3));
    CHECK(cfg.theta_f == doctest::Approx(0.1));
    CHECK_NOTHROW(cfg.validate());
    CHECK_THROWS_AS(default_config("huge"), InputError);
}

TEST_CASE("resolution order: flag beats file beats profile default") {
    const std::string path = write_temp_config("xoftr_cfg_order.txt",
                                               "# comment line\n"
                                               "theta_c = 0.5\n"
                                               "epochs = 17\n");
    SUBCASE("file overrides default") {
        const RunConfig cfg = resolve_config(path, {});
        CHECK(cfg.theta_c == doctest::Approx(0.5));
        CHECK(cfg.epochs == 17);
        CHECK(cfg.theta_f == doctest::Approx(0.1));  // untouched default
    }
    SUBCASE("flag overrides file") {
        const RunConfig cfg = resolve_config(path, {{"theta_c", "0.7"}});
        CHECK(cfg.theta_c == doctest::Approx(0.7));
        CHECK(cfg.epochs == 17);
    }
    SUBCASE("profile flag re-bases the defaults but keeps file entries") {
        const RunConfig cfg = resolve_config(path, {{"profile", "paper"}});
        CHECK(cfg.profile == "paper");
        CHECK(cfg.c8 == 256);
        CHECK(cfg.epochs == 17);
    }
    std::filesystem::remove(path);
}

TEST_CASE("profile inside the file selects the defaults before other keys apply") {
    const std::string path = write_temp_config("xoftr_cfg_profile.txt",
                                               "c2 = 32\n"
                                               "profile = paper\n");
    const RunConfig cfg = resolve_config(path, {});
    CHECK(cfg.profile == "paper");
    CHECK(cfg.c2 == 32);    // file entry wins over the paper default 64
    CHECK(cfg.c4 == 128);   // untouched paper default
    std::filesystem::remove(path);
}

TEST_CASE("unknown keys and malformed values are rejected by name") {
    CHECK_THROWS_WITH_AS(resolve_config("", {{"thetac", "0.5"}}),
                         doctest::Contains("thetac"), InputError);
    const std::string path = write_temp_config("xoftr_cfg_bad.txt", "not_a_key = 3\n");
    CHECK_THROWS_WITH_AS(resolve_config(path, {}), doctest::Contains("not_a_key"), InputError);
    std::filesystem::remove(path);

    CHECK_THROWS_WITH_AS(resolve_config("", {{"theta_c", "warm"}}), doctest::Contains("theta_c"),
                         InputError);
    CHECK_THROWS_AS(resolve_config("", {{"epochs", "2.5"}}), InputError);
    CHECK_THROWS_AS(resolve_config("", {{"use_sprm", "maybe"}}), InputError);
    CHECK_THROWS_AS(resolve_config("/nonexistent/path/config.txt", {}), InputError);

    const std::string garbled = write_temp_config("xoftr_cfg_garbled.txt", "theta_c 0.5\n");
    CHECK_THROWS_AS(resolve_config(garbled, {}), InputError);
    std::filesystem::remove(garbled);
}

TEST_CASE("serialize and parse round-trip preserves every field") {
    RunConfig cfg = default_config("toy");
    cfg.theta_c = 0.37;
    cfg.seed = 123456789;
    cfg.learning_rate = 3.25e-4;
    cfg.mim_placement = "overlap";
    cfg.use_augment = false;
    const std::string text = serialize_config(cfg);
    RunConfig back = default_config("toy");
    for (const auto& [key, value] : parse_config_text(text)) apply_config_entry(&back, key, value);
    CHECK(serialize_config(back) == text);
    CHECK(back.theta_c == cfg.theta_c);
    CHECK(back.seed == cfg.seed);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.mim_placement == "overlap");
    CHECK_FALSE(back.use_augment);
}

TEST_CASE("key registry matches what serialize emits and apply accepts") {
    const std::vector<std::string>& keys = config_keys();
    CHECK(keys.size() >= 40);
    const std::set<std::string> key_set(keys.begin(), keys.end());
    CHECK(key_set.size() == keys.size());  // no duplicates

    // Every serialized line must name a registered key.
    std::istringstream lines(serialize_config(default_config("toy")));
    std::string line;
    size_t serialized = 0;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::string key = line.substr(0, line.find(' '));
        CAPTURE(key);
        CHECK(key_set.count(key) == 1);
        ++serialized;
    }
    CHECK(serialized == keys.size());

    // Every registered key must be applicable.
    for (const std::string& key : keys) {
        RunConfig cfg = default_config("toy");
        const std::string probe = (key == "profile")         ? "paper"
                                  : (key == "mim_placement") ? "overlap"
                                                             : "1";
        CAPTURE(key);
        CHECK_NOTHROW(apply_config_entry(&cfg, key, probe));
    }
    CHECK_FALSE(is_config_key("bogus"));
    CHECK(is_config_key("theta_c"));
}

TEST_CASE("validation rejects inconsistent layouts") {
    RunConfig cfg = default_config("toy");
    cfg.c8 = 30;  // not divisible by 4: sin/cos positional split impossible
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.heads = 3;  // does not divide the widths
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.theta_c = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.mask_ratio = 1.01;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.mim_placement = "mosaic";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = default_config("toy");
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("fingerprint tracks layout, not training hyperparameters") {
    RunConfig a = default_config("toy");
    RunConfig b = a;
    b.learning_rate *= 10;
    b.theta_c = 0.9;
    b.seed = 999;
    CHECK(config_fingerprint(a) == config_fingerprint(b));
    b.c8 = 64;
    CHECK(config_fingerprint(a) != config_fingerprint(b));
    RunConfig c = a;
    c.coarse_layers += 1;
    CHECK(config_fingerprint(a) != config_fingerprint(c));
}

TEST_SUITE_END();
