// Copyright 2026 The delrec Authors
// SPDX-License-Identifier: Apache-2.0
#include "delrec/expctl/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "delrec/util/error.hpp"
#include "delrec/util/hash.hpp"
#include "delrec/util/rng.hpp"
#include "json.hpp"

namespace delrec::expctl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using prompting::TemplateConfig;

namespace {

constexpr std::size_t kKeyLength = 16;

std::string short_hash(const std::string& text) { return sha256_hex(text).substr(0, kKeyLength); }

template <typename Save>
void save_atomic(const fs::path& path, Save&& save) {
    const fs::path tmp = path.string() + ".tmp";
    save(tmp);
    fs::rename(tmp, path);
}

std::string json_text(const ordered_json& j) { return j.dump(2) + "\n"; }

ordered_json read_json(const fs::path& path) {
    try {
        return ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

ordered_json stats_json(const catalog::DatasetStats& s) {
    return ordered_json{{"users", s.users}, {"items", s.items}, {"interactions", s.interactions}, {"sparsity", s.sparsity}};
}

}  // namespace

std::string_view variant_name(BankVariant v) {
    switch (v) {
        case BankVariant::full: return "full";
        case BankVariant::ta_only: return "ta_only";
        case BankVariant::rps_only: return "rps_only";
        case BankVariant::udpsm: return "udpsm";
    }
    return "full";
}

std::optional<BankVariant> bank_variant_for(adapt::Ablation a) {
    using adapt::Ablation;
    switch (a) {
        case Ablation::none:
        case Ablation::w_ulsr: return BankVariant::full;
        case Ablation::wo_ta_bank: return BankVariant::rps_only;
        case Ablation::wo_rps_bank: return BankVariant::ta_only;
        case Ablation::w_udpsm: return BankVariant::udpsm;
        case Ablation::wo_sp:
        case Ablation::w_mcp:
        case Ablation::w_usp: return std::nullopt;
    }
    return std::nullopt;
}

fs::path resolve_root(const fs::path& explicit_root) {
    if (!explicit_root.empty()) return explicit_root;
    if (const char* env = std::getenv(kRootEnv); env && *env) return fs::path(env);
    return fs::path("delrec-out");
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + tmp.string());
        f << contents;
        if (!f) throw Error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Pipeline::Keys {
    std::string data, teacher, top_h, base;
    std::map<BankVariant, std::string> bank;
    std::map<adapt::Ablation, std::string> adapters;
};

Pipeline::Pipeline(ExperimentConfig config, fs::path root, bool force, std::ostream* log)
    : config_(std::move(config)), root_(std::move(root)), force_(force), log_(log) {
    config_.validate();
}

Pipeline::~Pipeline() = default;

void Pipeline::say(const std::string& line) const {
    if (log_) *log_ << line << std::endl;
}

const Pipeline::Keys& Pipeline::keys() {
    if (keys_) return *keys_;
    auto k = std::make_unique<Keys>();
    const std::string seed = "run.seed=" + std::to_string(config_.seed) + "\n";
    k->data = short_hash("data\n" + config_.section_text("dataset"));
    k->teacher = short_hash("teacher\n" + k->data + "\n" + seed + config_.section_text("teacher"));
    k->top_h = short_hash("top_h\n" + k->teacher + "\nh=" + std::to_string(config_.tpl.h));
    k->base = short_hash("base\n" + k->data + "\n" + seed + config_.section_text("lm") +
                         config_.section_text("pretrain") + config_.section_text("template"));
    for (BankVariant v : {BankVariant::full, BankVariant::ta_only, BankVariant::rps_only, BankVariant::udpsm}) {
        k->bank[v] = short_hash("bank\n" + k->base + "\n" + k->top_h + "\n" + config_.section_text("distill") +
                                "variant=" + std::string(variant_name(v)));
    }
    for (adapt::Ablation a : adapt::all_ablations()) {
        const auto v = bank_variant_for(a);
        const std::string upstream = v ? k->bank[*v] : k->base;
        k->adapters[a] = short_hash("adapters\n" + upstream + "\n" + config_.section_text("adapt") +
                                    "ablation=" + std::string(adapt::ablation_name(a)));
    }
    keys_ = std::move(k);
    return *keys_;
}

fs::path Pipeline::data_dir() { return root_ / "data" / keys().data; }
fs::path Pipeline::teacher_dir() { return root_ / "teacher" / keys().teacher; }
fs::path Pipeline::top_h_dir() { return root_ / "top_h" / keys().top_h; }
fs::path Pipeline::base_dir() { return root_ / "base" / keys().base; }
fs::path Pipeline::bank_dir(BankVariant v) { return root_ / "bank" / keys().bank.at(v); }
fs::path Pipeline::adapters_dir(adapt::Ablation a) { return root_ / "adapters" / keys().adapters.at(a); }
fs::path Pipeline::report_dir(adapt::Ablation a) { return root_ / "reports" / keys().adapters.at(a); }

std::string Pipeline::config_hash_for(adapt::Ablation a) const {
    ExperimentConfig c = config_;
    c.ablation = a;
    return c.hash();
}

template <typename F>
void Pipeline::stage(const std::string& name, const fs::path& dir, const std::string& inputs, F&& body) {
    const fs::path meta = dir / "meta.json";
    const std::string id = name + "/" + dir.filename().string();
    if (fs::exists(meta) && (!force_ || done_.count(id))) {
        const auto j = read_json(meta);
        if (j.value("stage", "") != name || j.value("key", "") != dir.filename().string()) {
            throw Error("stage " + name + ": " + meta.string() + " belongs to another stage");
        }
        done_.insert(id);
        return;
    }
    // Leftovers from an interrupted or failed run are discarded.
    fs::remove_all(dir);
    fs::create_directories(dir);
    say("[" + name + "] " + dir.string());
    try {
        body(dir);
    } catch (const std::exception& e) {
        std::ofstream(dir / "FAILED") << e.what() << '\n';
        throw Error("stage " + name + " failed: " + e.what());
    }
    ordered_json j;
    j["stage"] = name;
    j["key"] = dir.filename().string();
    j["config_hash"] = config_.hash();
    j["inputs"] = inputs;
    write_file_atomic(meta, json_text(j));
    done_.insert(id);
    computed_.push_back(name);
}

const PreparedData& Pipeline::data() {
    if (data_) return *data_;
    const auto& ds = config_.dataset;
    PreparedData d;
    std::ostringstream examples;
    std::string titles;
    try {
        catalog::Dataset raw;
        if (ds.format == "synthetic") {
            raw = catalog::generate_synthetic(ds.synthetic);
        } else {
            std::optional<fs::path> titles_path;
            if (!ds.titles.empty()) titles_path = ds.titles;
            raw = catalog::load_interactions(ds.path, catalog::parse_format(ds.format), titles_path);
        }
        d.raw_stats = catalog::stats(raw.log);
        d.dataset = catalog::compact(catalog::filter_min_interactions(raw.log, ds.filter_threshold), raw.catalog);
        d.stats = catalog::stats(d.dataset.log);
        d.all = catalog::window_examples(catalog::chronological_split(d.dataset.log, ds.split), ds.history_length);
        d.train = catalog::select_split(d.all, catalog::Split::train);
        d.valid = catalog::select_split(d.all, catalog::Split::valid);
        d.test = catalog::select_split(d.all, catalog::Split::test);
        d.universe = catalog::item_universe(d.dataset.log);
        if (d.train.empty() || d.test.empty()) throw Error("empty train or test split");
        catalog::write_examples(examples, d.all, d.dataset.log, d.dataset.catalog);
        for (std::size_t i = 1; i < d.dataset.catalog.titles.size(); ++i) {
            titles += d.dataset.catalog.raw_ids[i] + "\t" + d.dataset.catalog.titles[i] + "\n";
        }
    } catch (const std::exception& e) {
        fs::create_directories(data_dir());
        std::ofstream(data_dir() / "FAILED") << e.what() << '\n';
        throw Error(std::string("stage data failed: ") + e.what());
    }
    d.hash = sha256_hex(examples.str() + titles);
    data_ = std::move(d);

    stage("data", data_dir(), "", [&](const fs::path& dir) {
        write_file_atomic(dir / "examples.tsv", examples.str());
        write_file_atomic(dir / "titles.tsv", titles);
        ordered_json j;
        j["dataset_hash"] = data_->hash;
        j["raw"] = stats_json(data_->raw_stats);
        j["filtered"] = stats_json(data_->stats);
        j["examples"] = {{"train", data_->train.size()}, {"valid", data_->valid.size()}, {"test", data_->test.size()}};
        write_file_atomic(dir / "stats.json", json_text(j));
    });
    const auto stored = read_json(data_dir() / "stats.json");
    if (stored.at("dataset_hash").get<std::string>() != data_->hash) {
        throw Error("stage data: " + data_dir().string() + " holds a different dataset (hash mismatch)");
    }
    return *data_;
}

const teachers::TeacherModel& Pipeline::teacher() {
    if (teacher_) return *teacher_;
    const PreparedData& d = data();
    stage("teacher", teacher_dir(), keys().data, [&](const fs::path& dir) {
        teachers::TrainResult tr;
        const auto model = teachers::train_teacher(config_.teacher_config(), d.dataset.catalog.item_count(), d.train,
                                                   d.valid, &tr);
        save_atomic(dir / "teacher.bin", [&](const fs::path& p) { model.save(p); });
        std::ostringstream csv;
        csv << "epoch,train_loss,valid_hr10,valid_ndcg10\n";
        csv.precision(9);
        for (const auto& e : tr.epochs) {
            csv << e.epoch << ',' << e.train_loss << ',' << e.valid_hr10 << ',' << e.valid_ndcg10 << '\n';
        }
        write_file_atomic(dir / "epochs.csv", csv.str());

        // Candidate-protocol quality against a random ranker on the same candidate sets.
        const std::size_t m = config_.dataset.candidates;
        const std::uint64_t cseed = config_.template_config(TemplateConfig::SoftMode::bank).seed;
        const auto by_teacher = rank::rank_examples(
            [&](const catalog::SeqExample& ex, const catalog::CandidateSet& cs) {
                const auto all = model.score_next(ex.history);
                std::vector<double> s;
                for (auto item : cs.items) s.push_back(all[item]);
                return s;
            },
            d.test, d.universe, m, cseed);
        const std::uint64_t rseed = config_.derived_seed("random_ranker");
        const auto by_random = rank::rank_examples(
            [&](const catalog::SeqExample& ex, const catalog::CandidateSet& cs) {
                Rng rng = Rng::substream(rseed, "random_ranker", ex.id);
                std::vector<double> s(cs.items.size());
                for (double& v : s) v = rng.uniform01();
                return s;
            },
            d.test, d.universe, m, cseed);
        const auto rt = rank::summarize(by_teacher), rr = rank::summarize(by_random);
        const auto tt = rank::paired_t_test(rank::hits(rt.ranks, 1), rank::hits(rr.ranks, 1));
        ordered_json j;
        j["best_epoch"] = tr.best_epoch;
        j["n"] = rt.n;
        j["hr@1"] = rt.hr1;
        j["hr@5"] = rt.hr5;
        j["hr@10"] = rt.hr10;
        j["random_hr@1"] = rr.hr1;
        j["t"] = tt.t;
        j["p"] = tt.p;
        write_file_atomic(dir / "eval.json", json_text(j));
    });
    teacher_ = teachers::TeacherModel::load(teacher_dir() / "teacher.bin");
    return *teacher_;
}

TeacherEval Pipeline::teacher_eval() {
    teacher();
    const auto j = read_json(teacher_dir() / "eval.json");
    TeacherEval e;
    e.hr1 = j.at("hr@1").get<double>();
    e.random_hr1 = j.at("random_hr@1").get<double>();
    e.ttest.t = j.at("t").get<double>();
    e.ttest.p = j.at("p").get<double>();
    e.n = j.at("n").get<std::size_t>();
    e.ttest.df = static_cast<double>(e.n) - 1.0;
    return e;
}

const std::vector<teachers::TeacherTopH>& Pipeline::top_h() {
    if (top_h_) return *top_h_;
    const PreparedData& d = data();
    const auto& model = teacher();
    stage("top_h", top_h_dir(), keys().teacher, [&](const fs::path& dir) {
        // Stage-1 supervision only: train and valid examples, never test.
        std::vector<catalog::SeqExample> seen = d.train;
        seen.insert(seen.end(), d.valid.begin(), d.valid.end());
        const auto rows = teachers::export_top_h(model, seen, config_.tpl.h);
        std::ostringstream os;
        teachers::write_top_h(os, rows, d.dataset.catalog);
        write_file_atomic(dir / "top_h.tsv", os.str());
    });
    std::ifstream f(top_h_dir() / "top_h.tsv");
    top_h_ = teachers::read_top_h(f, d.dataset.catalog);
    if (top_h_->size() != d.train.size() + d.valid.size()) {
        throw Error("stage top_h: export does not cover the train and valid examples");
    }
    return *top_h_;
}

prompting::Renderer Pipeline::renderer(TemplateConfig::SoftMode mode) {
    const PreparedData& d = data();
    return prompting::Renderer(vocab(), d.dataset.catalog, d.universe, config_.template_config(mode));
}

const tinylm::Vocab& Pipeline::vocab() {
    if (vocab_) return *vocab_;
    base_model();
    return *vocab_;
}

tinylm::LMParams Pipeline::base_model() {
    const PreparedData& d = data();
    stage("base", base_dir(), keys().data, [&](const fs::path& dir) {
        std::vector<std::string> corpus(d.dataset.catalog.titles.begin() + 1, d.dataset.catalog.titles.end());
        for (auto& s : prompting::template_corpus(config_.template_config(TemplateConfig::SoftMode::bank))) {
            corpus.push_back(std::move(s));
        }
        const auto v = tinylm::Vocab::build(corpus, config_.vocab_max);
        std::ostringstream vs;
        v.write(vs);
        write_file_atomic(dir / "vocab.txt", vs.str());

        auto params = tinylm::LMParams::init(config_.lm_config(v.size()));
        const prompting::Renderer r(v, d.dataset.catalog, d.universe,
                                    config_.template_config(TemplateConfig::SoftMode::bank));
        std::ostringstream csv;
        csv << "step,loss\n";
        csv.precision(9);
        const auto pc = config_.pretrain_config();
        const double tail = distill::pretrain_base(params, r, pc, [&](std::size_t step, double loss) {
            csv << step << ',' << loss << '\n';
            if (log_ && (step + 1) % 250 == 0) say("  pretrain step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
        });
        say("  pretrain tail loss " + std::to_string(tail));
        write_file_atomic(dir / "pretrain.csv", csv.str());
        save_atomic(dir / "base.lmc", [&](const fs::path& p) { params.save(p); });
    });
    if (!vocab_) {
        std::istringstream vs(read_file(base_dir() / "vocab.txt"));
        vocab_ = tinylm::Vocab::read(vs);
    }
    return tinylm::LMParams::load(base_dir() / "base.lmc");
}

tinylm::LMParams Pipeline::stage1(BankVariant v) {
    const PreparedData& d = data();
    const auto& tops = top_h();
    auto params = base_model();
    stage("bank", bank_dir(v), keys().base + "," + keys().top_h, [&](const fs::path& dir) {
        const auto r = renderer(TemplateConfig::SoftMode::bank);
        std::unordered_map<std::uint64_t, const teachers::TeacherTopH*> top_by_id;
        for (const auto& t : tops) top_by_id[t.example_id] = &t;

        std::vector<prompting::RenderedPrompt> ta, rps;
        for (const auto& ex : d.train) {
            if (auto p = r.render_ta(ex)) ta.push_back(std::move(*p));
            rps.push_back(r.render_rps(ex, *top_by_id.at(ex.id)));
        }
        if (const auto over = prompting::count_overflow(rps, params.config.max_positions) +
                              prompting::count_overflow(ta, params.config.max_positions)) {
            throw Error(std::to_string(over) + " stage-1 prompts exceed lm.max_positions");
        }
        const auto ta_items = distill::to_train_items(ta), rps_items = distill::to_train_items(rps);

        distill::DistillConfig dc = config_.distill_config();
        if (v == BankVariant::ta_only) dc.fixed_lambda = 1.0;
        if (v == BankVariant::rps_only) dc.fixed_lambda = 0.0;
        if (v == BankVariant::udpsm) dc.partition = adapt::stage1_partition(adapt::Ablation::w_udpsm);
        params.soft = tinylm::init_soft_prompts(config_.tpl.k, params.config.d_model, config_.derived_seed("bank"));
        tinylm::BankProvenance prov;
        prov.teacher_arch = std::string(teachers::arch_name(config_.teacher.arch));
        prov.dataset_id = d.hash;
        prov.template_hash = r.config().hash();
        say("  " + std::to_string(ta_items.size()) + " TA / " + std::to_string(rps_items.size()) + " RPS prompts");
        const auto res = distill::run_stage1(dc, ta_items, rps_items, params, prov);

        std::ostringstream csv;
        distill::write_curve(csv, res.curve);
        write_file_atomic(dir / "curve.csv", csv.str());
        save_atomic(dir / "bank.spb", [&](const fs::path& p) { params.soft.save(p); });
        save_atomic(dir / "model.lmc", [&](const fs::path& p) { params.save(p); });

        // Held-out agreement with the teacher's top-1 on test RPS prompts.
        const auto stored = tinylm::LMParams::load(dir / "model.lmc");
        const auto held_out = teachers::export_top_h(teacher(), d.test, config_.tpl.h);
        std::size_t agree = 0;
        for (std::size_t i = 0; i < d.test.size(); ++i) {
            const auto p = r.render_rps(d.test[i], held_out[i]);
            agree += rank::verbalize(stored, p, r).target_rank == 1;
        }
        ordered_json j;
        j["agreement"] = static_cast<double>(agree) / static_cast<double>(d.test.size());
        j["n"] = d.test.size();
        write_file_atomic(dir / "fidelity.json", json_text(j));
        say("  held-out RPS agreement " + std::to_string(j["agreement"].get<double>()));
    });
    return tinylm::LMParams::load(bank_dir(v) / "model.lmc");
}

std::vector<distill::StepLog> Pipeline::stage1_curve(BankVariant v) {
    stage1(v);
    std::istringstream is(read_file(bank_dir(v) / "curve.csv"));
    std::vector<distill::StepLog> out;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 5) throw Error("curve.csv: bad row '" + line + "'");
        distill::StepLog s;
        s.step = std::stoull(f[0]);
        if (!f[1].empty()) s.loss_ta = std::stod(f[1]);
        if (!f[2].empty()) s.loss_rps = std::stod(f[2]);
        s.lambda = std::stod(f[3]);
        s.grad_norm = std::stod(f[4]);
        out.push_back(s);
    }
    return out;
}

Fidelity Pipeline::fidelity(BankVariant v) {
    stage1(v);
    const auto j = read_json(bank_dir(v) / "fidelity.json");
    return Fidelity{j.at("agreement").get<double>(), j.at("n").get<std::size_t>()};
}

tinylm::LMParams Pipeline::stage2(adapt::Ablation a) {
    const PreparedData& d = data();
    const auto variant = bank_variant_for(a);
    auto params = variant ? stage1(*variant) : base_model();
    const std::string upstream = variant ? keys().bank.at(*variant) : keys().base;
    stage("adapters", adapters_dir(a), upstream, [&](const fs::path& dir) {
        const auto mode = adapt::soft_mode_for(a);
        if (a == adapt::Ablation::w_usp) {
            params.soft = tinylm::init_soft_prompts(config_.tpl.k, params.config.d_model, config_.derived_seed("bank"));
        } else if (mode != TemplateConfig::SoftMode::bank) {
            params.soft = tinylm::SoftPromptBank{};
        }
        const auto r = renderer(mode);
        std::vector<prompting::RenderedPrompt> prompts;
        for (const auto& ex : d.train) prompts.push_back(r.render_lsr(ex));
        if (const auto over = prompting::count_overflow(prompts, params.config.max_positions)) {
            throw Error(std::to_string(over) + " LSR prompts exceed lm.max_positions");
        }
        const auto items = distill::to_train_items(prompts);
        adapt::Validator validator;
        if (!d.valid.empty()) {
            validator = [&](const tinylm::LMParams& m, std::size_t k) {
                const auto results = rank::rank_examples(m, r, d.valid);
                std::vector<std::size_t> ranks;
                for (const auto& res : results) ranks.push_back(res.target_rank);
                return rank::hr_at_k(ranks, k);
            };
        }
        const auto res = adapt::run_stage2(config_.adapt_config(a), items, params, validator);
        std::ostringstream csv;
        csv << "epoch,train_loss,valid_hr,retained,best\n";
        csv.precision(9);
        for (const auto& e : res.epochs) {
            csv << e.epoch << ',' << e.train_loss << ',';
            if (e.valid_hr) csv << *e.valid_hr;
            csv << ',' << e.retained << ',' << (e.epoch == res.best_epoch ? 1 : 0) << '\n';
            say("  epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss) +
                (e.valid_hr ? " valid HR " + std::to_string(*e.valid_hr) : std::string()));
        }
        write_file_atomic(dir / "epochs.csv", csv.str());
        save_atomic(dir / "adapters.adp", [&](const fs::path& p) { params.adapters->save(p); });
        save_atomic(dir / "model.lmc", [&](const fs::path& p) { params.save(p); });
    });
    return tinylm::LMParams::load(adapters_dir(a) / "model.lmc");
}

rank::MetricsReport Pipeline::evaluate(adapt::Ablation a) {
    const PreparedData& d = data();
    const auto params = stage2(a);
    stage("reports", report_dir(a), keys().adapters.at(a), [&](const fs::path& dir) {
        const auto r = renderer(adapt::soft_mode_for(a));
        auto report = rank::summarize(rank::rank_examples(params, r, d.test));
        report.label = std::string(adapt::ablation_name(a));
        report.config_hash = config_hash_for(a);
        report.seed = config_.seed;
        report.dataset_hash = d.hash;
        report.template_hash = r.config().hash();
        report.bank_hash = params.soft.empty() ? std::string() : params.soft.sha256();
        std::ostringstream os;
        rank::write_report(os, report);
        write_file_atomic(dir / "report.json", os.str());
    });
    std::ifstream f(report_path(a));
    return rank::read_report(f);
}

rank::MetricsReport Pipeline::run() { return evaluate(config_.ablation); }

}  // namespace delrec::expctl
