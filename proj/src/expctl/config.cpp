// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/expctl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"

namespace delrec::expctl {
namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view where) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw Error("config: bad value '" + std::string(text) + "' for " + std::string(where));
    return v;
}

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <typename T>
std::string fmt_int(T v) {
    return std::to_string(v);
}

struct Key {
    const char* section;
    const char* name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_KEY(sec, key, field)                                                                              \
    Key {                                                                                                      \
        sec, key, [](ExperimentConfig& c, std::string_view v) { c.field = parse_number<std::size_t>(v, sec "." key); }, \
            [](const ExperimentConfig& c) { return fmt_int(c.field); }                                         \
    }
#define DOUBLE_KEY(sec, key, field)                                                                          \
    Key {                                                                                                    \
        sec, key, [](ExperimentConfig& c, std::string_view v) { c.field = parse_number<double>(v, sec "." key); }, \
            [](const ExperimentConfig& c) { return fmt(c.field); }                                           \
    }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        Key{"run", "seed", [](ExperimentConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>(v, "run.seed"); },
            [](const ExperimentConfig& c) { return fmt_int(c.seed); }},
        Key{"run", "ablation", [](ExperimentConfig& c, std::string_view v) { c.ablation = adapt::parse_ablation(v); },
            [](const ExperimentConfig& c) { return std::string(adapt::ablation_name(c.ablation)); }},
        Key{"run", "out", [](ExperimentConfig& c, std::string_view v) { c.out = std::string(v); }, nullptr},

        Key{"dataset", "format",
            [](ExperimentConfig& c, std::string_view v) {
                if (v != "synthetic") catalog::parse_format(v);
                c.dataset.format = std::string(v);
            },
            [](const ExperimentConfig& c) { return c.dataset.format; }},
        Key{"dataset", "path", [](ExperimentConfig& c, std::string_view v) { c.dataset.path = std::string(v); },
            [](const ExperimentConfig& c) { return c.dataset.path.string(); }},
        Key{"dataset", "titles", [](ExperimentConfig& c, std::string_view v) { c.dataset.titles = std::string(v); },
            [](const ExperimentConfig& c) { return c.dataset.titles.string(); }},
        Key{"dataset", "synthetic_kind",
            [](ExperimentConfig& c, std::string_view v) { c.dataset.synthetic.kind = catalog::parse_synthetic_kind(v); },
            [](const ExperimentConfig& c) {
                return std::string(c.dataset.synthetic.kind == catalog::SyntheticKind::cyclic ? "cyclic" : "markov");
            }},
        SIZE_KEY("dataset", "synthetic_items", dataset.synthetic.items),
        SIZE_KEY("dataset", "synthetic_users", dataset.synthetic.users),
        SIZE_KEY("dataset", "synthetic_min_length", dataset.synthetic.min_length),
        SIZE_KEY("dataset", "synthetic_max_length", dataset.synthetic.max_length),
        DOUBLE_KEY("dataset", "synthetic_noise", dataset.synthetic.noise),
        Key{"dataset", "synthetic_seed",
            [](ExperimentConfig& c, std::string_view v) {
                c.dataset.synthetic.seed = parse_number<std::uint64_t>(v, "dataset.synthetic_seed");
            },
            [](const ExperimentConfig& c) { return fmt_int(c.dataset.synthetic.seed); }},
        SIZE_KEY("dataset", "history_length", dataset.history_length),
        SIZE_KEY("dataset", "candidates", dataset.candidates),
        Key{"dataset", "filter_threshold",
            [](ExperimentConfig& c, std::string_view v) {
                c.dataset.filter_threshold = parse_number<int>(v, "dataset.filter_threshold");
            },
            [](const ExperimentConfig& c) { return fmt_int(c.dataset.filter_threshold); }},
        DOUBLE_KEY("dataset", "split_train", dataset.split.train),
        DOUBLE_KEY("dataset", "split_valid", dataset.split.valid),
        DOUBLE_KEY("dataset", "split_test", dataset.split.test),

        Key{"teacher", "arch",
            [](ExperimentConfig& c, std::string_view v) {
                // Switching architecture resets the architecture defaults; later keys override them.
                c.teacher = teachers::TeacherConfig::defaults(teachers::parse_arch(v));
            },
            [](const ExperimentConfig& c) { return std::string(teachers::arch_name(c.teacher.arch)); }},
        SIZE_KEY("teacher", "embedding_dim", teacher.embedding_dim),
        SIZE_KEY("teacher", "blocks", teacher.blocks),
        SIZE_KEY("teacher", "heads", teacher.heads),
        SIZE_KEY("teacher", "horizontal_filters", teacher.horizontal_filters),
        SIZE_KEY("teacher", "vertical_filters", teacher.vertical_filters),
        DOUBLE_KEY("teacher", "dropout", teacher.dropout),
        DOUBLE_KEY("teacher", "learning_rate", teacher.learning_rate),
        SIZE_KEY("teacher", "batch_size", teacher.batch_size),
        Key{"teacher", "optimizer",
            [](ExperimentConfig& c, std::string_view v) {
                if (v == "adam") c.teacher.optimizer = teachers::OptimizerKind::adam;
                else if (v == "adagrad") c.teacher.optimizer = teachers::OptimizerKind::adagrad;
                else throw Error("config: teacher.optimizer must be adam or adagrad");
            },
            [](const ExperimentConfig& c) {
                return std::string(c.teacher.optimizer == teachers::OptimizerKind::adam ? "adam" : "adagrad");
            }},
        SIZE_KEY("teacher", "epochs", teacher.epochs),
        SIZE_KEY("teacher", "patience", teacher.patience),

        SIZE_KEY("lm", "d_model", lm.d_model),
        SIZE_KEY("lm", "n_layers", lm.n_layers),
        SIZE_KEY("lm", "n_heads", lm.n_heads),
        SIZE_KEY("lm", "ffn_dim", lm.ffn_dim),
        SIZE_KEY("lm", "max_positions", lm.max_positions),
        SIZE_KEY("lm", "vocab_max", vocab_max),

        SIZE_KEY("pretrain", "steps", pretrain.steps),
        SIZE_KEY("pretrain", "batch_size", pretrain.batch_size),
        DOUBLE_KEY("pretrain", "learning_rate", pretrain.learning_rate),
        SIZE_KEY("pretrain", "warmup_steps", pretrain.warmup_steps),
        SIZE_KEY("pretrain", "recall_queries", pretrain.recall_queries),
        SIZE_KEY("pretrain", "curriculum_steps", pretrain.curriculum_steps),
        SIZE_KEY("pretrain", "context_ramp_steps", pretrain.context_ramp_steps),

        SIZE_KEY("template", "alpha", tpl.alpha),
        SIZE_KEY("template", "k", tpl.k),
        SIZE_KEY("template", "h", tpl.h),
        SIZE_KEY("template", "max_title_tokens", tpl.max_title_tokens),

        DOUBLE_KEY("distill", "learning_rate", distill.learning_rate),
        DOUBLE_KEY("distill", "weight_decay", distill.weight_decay),
        DOUBLE_KEY("distill", "beta1", distill.beta1),
        DOUBLE_KEY("distill", "beta2", distill.beta2),
        SIZE_KEY("distill", "epochs", distill.epochs),
        SIZE_KEY("distill", "batch_size", distill.batch_size),
        DOUBLE_KEY("distill", "lambda_init", distill.lambda_init),
        DOUBLE_KEY("distill", "lambda_min", distill.lambda_min),
        DOUBLE_KEY("distill", "lambda_max", distill.lambda_max),
        DOUBLE_KEY("distill", "ema_decay", distill.ema_decay),
        SIZE_KEY("distill", "warmup_steps", distill.warmup_steps),
        DOUBLE_KEY("distill", "base_learning_rate", distill.base_learning_rate),

        DOUBLE_KEY("adapt", "learning_rate", adapt.learning_rate),
        DOUBLE_KEY("adapt", "weight_decay", adapt.weight_decay),
        DOUBLE_KEY("adapt", "beta1", adapt.beta1),
        DOUBLE_KEY("adapt", "beta2", adapt.beta2),
        SIZE_KEY("adapt", "epochs", adapt.epochs),
        SIZE_KEY("adapt", "batch_size", adapt.batch_size),
        SIZE_KEY("adapt", "rank", adapt.rank),
        SIZE_KEY("adapt", "budget", adapt.budget),
        SIZE_KEY("adapt", "prune_every", adapt.prune_every),
        DOUBLE_KEY("adapt", "importance_beta", adapt.importance_beta),
        SIZE_KEY("adapt", "select_k", adapt.select_k),
    };
    return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY

const Key& find_key(std::string_view section, std::string_view name) {
    for (const Key& k : keys()) {
        if (section == k.section && name == k.name) return k;
    }
    throw Error("config: unknown key '" + std::string(name) + "' in section [" + std::string(section) + "]");
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.format == "synthetic") {
        if (dataset.synthetic.items < 2 || dataset.synthetic.users == 0) throw Error("config: synthetic dataset too small");
    } else if (dataset.path.empty()) {
        throw Error("config: dataset.path is required for format " + dataset.format);
    }
    if (dataset.history_length < 3) throw Error("config: dataset.history_length must be at least 3");
    if (dataset.candidates < 2) throw Error("config: dataset.candidates must be at least 2");
    const double total = dataset.split.train + dataset.split.valid + dataset.split.test;
    if (dataset.split.train <= 0.0 || dataset.split.valid < 0.0 || dataset.split.test <= 0.0 || std::abs(total - 1.0) > 1e-9) {
        throw Error("config: split ratios must be non-negative and sum to 1");
    }
    teacher_config().validate();
    lm_config(16).validate();
    if (vocab_max < 8) throw Error("config: lm.vocab_max too small");
    if (pretrain.batch_size == 0) throw Error("config: pretrain.batch_size must be positive");
    template_config(prompting::TemplateConfig::SoftMode::bank).validate();
    distill_config().validate();
    adapt_config(ablation).validate();
}

std::string ExperimentConfig::canonical() const {
    std::string out;
    for (const Key& k : keys()) {
        if (!k.get) continue;
        out += std::string(k.section) + "." + k.name + "=" + k.get(*this) + "\n";
    }
    return out;
}

std::string ExperimentConfig::section_text(std::string_view section) const {
    std::string out;
    for (const Key& k : keys()) {
        if (!k.get || section != k.section) continue;
        out += std::string(k.section) + "." + k.name + "=" + k.get(*this) + "\n";
    }
    return out;
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical()); }

std::uint64_t ExperimentConfig::derived_seed(std::string_view stream) const {
    return Rng::substream(seed, "expctl.seed." + std::string(stream)).next_u64();
}

teachers::TeacherConfig ExperimentConfig::teacher_config() const {
    teachers::TeacherConfig c = teacher;
    c.history_length = dataset.history_length;
    c.seed = derived_seed("teacher");
    return c;
}

tinylm::LMConfig ExperimentConfig::lm_config(std::size_t vocab_size) const {
    tinylm::LMConfig c = lm;
    c.vocab_size = vocab_size;
    c.seed = derived_seed("lm");
    return c;
}

distill::PretrainConfig ExperimentConfig::pretrain_config() const {
    distill::PretrainConfig c = pretrain;
    c.seed = derived_seed("pretrain");
    return c;
}

prompting::TemplateConfig ExperimentConfig::template_config(prompting::TemplateConfig::SoftMode mode) const {
    prompting::TemplateConfig c = tpl;
    c.m = dataset.candidates;
    c.history_length = dataset.history_length;
    c.teacher_name = std::string(teachers::arch_name(teacher.arch));
    c.seed = derived_seed("candidates");
    c.soft_mode = mode;
    return c;
}

distill::DistillConfig ExperimentConfig::distill_config() const {
    distill::DistillConfig c = distill;
    c.seed = derived_seed("distill");
    return c;
}

adapt::AdaptConfig ExperimentConfig::adapt_config(adapt::Ablation a) const {
    adapt::AdaptConfig c = adapt;
    c.ablation = a;
    c.seed = derived_seed("adapt");
    return c;
}

void set_value(ExperimentConfig& config, std::string_view section, std::string_view key, std::string_view value) {
    find_key(section, key).set(config, value);
}

ExperimentConfig parse_config(std::istream& is) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    // [teacher] arch resets the teacher defaults, so it is applied first.
    if (const auto t = tree.get_child_optional("teacher")) {
        if (const auto arch = t->get_optional<std::string>("arch")) set_value(c, "teacher", "arch", *arch);
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw Error("config: key '" + section + "' outside a section");
        for (const auto& [name, value] : body) {
            if (section == "teacher" && name == "arch") continue;
            set_value(c, section, name, value.data());
        }
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("config: cannot open " + path.string());
    return parse_config(f);
}

void write_config(std::ostream& os, const ExperimentConfig& config) {
    std::string current;
    for (const Key& k : keys()) {
        std::string value;
        if (k.get) {
            value = k.get(config);
        } else if (std::string_view(k.name) == "out") {
            if (config.out.empty()) continue;
            value = config.out.string();
        }
        if (current != k.section) {
            if (!current.empty()) os << '\n';
            current = k.section;
            os << '[' << current << "]\n";
        }
        os << k.name << " = " << value << '\n';
    }
}

}  // namespace delrec::expctl
