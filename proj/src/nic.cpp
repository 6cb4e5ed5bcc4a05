#include "hybridcap/nic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "hybridcap/error.hpp"

namespace hybridcap {

namespace {

constexpr const char* kCheckpointMagic = "hybridcap-nic-checkpoint";
constexpr int kCheckpointVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd log_softmax(const VectorXd& logits) {
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    return logits.array() - lse;
}

void require_finite(const VectorXd& v) {
    if (!v.allFinite()) throw Error("numerical overflow");
}

struct StepCache {
    VectorXd input;        // x_t
    VectorXd hidden_prev;  // h_{t-1}
    VectorXd cell_prev;    // c_{t-1}
    VectorXd gate_i, gate_f, gate_o, gate_g;
    VectorXd cell;         // c_t
    VectorXd cell_tanh;    // tanh(c_t)
    VectorXd hidden;       // h_t
};

StepCache lstm_forward(const NicParameters& p, const VectorXd& hidden_prev,
                       const VectorXd& cell_prev, const VectorXd& input) {
    const int H = p.hidden_dim();
    const int E = p.embed_dim();
    StepCache s;
    s.input = input;
    s.hidden_prev = hidden_prev;
    s.cell_prev = cell_prev;
    VectorXd pre = p.lstm_bias;
    pre.noalias() += p.lstm_weight.leftCols(E) * input;
    pre.noalias() += p.lstm_weight.rightCols(H) * hidden_prev;
    s.gate_i = pre.segment(0, H).unaryExpr(&sigmoid);
    s.gate_f = pre.segment(H, H).unaryExpr(&sigmoid);
    s.gate_o = pre.segment(2 * H, H).unaryExpr(&sigmoid);
    s.gate_g = pre.segment(3 * H, H).array().tanh();
    s.cell = s.gate_f.cwiseProduct(cell_prev) + s.gate_i.cwiseProduct(s.gate_g);
    s.cell_tanh = s.cell.array().tanh();
    s.hidden = s.gate_o.cwiseProduct(s.cell_tanh);
    return s;
}

double xavier_limit(Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(MatrixXd& m, double limit, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    }
}

}  // namespace

// ------------------------------------------------------------- NicParameters

NicParameters NicParameters::zeros(int feature_dim, int vocab_size, int embed_dim,
                                   int hidden_dim) {
    if (feature_dim < 1 || vocab_size < 1 || embed_dim < 1 || hidden_dim < 1) {
        throw Error("NIC dimensions must be positive");
    }
    NicParameters p;
    p.image_proj = MatrixXd::Zero(embed_dim, feature_dim);
    p.image_bias = VectorXd::Zero(embed_dim);
    p.embedding = MatrixXd::Zero(vocab_size, embed_dim);
    p.lstm_weight = MatrixXd::Zero(4 * hidden_dim, embed_dim + hidden_dim);
    p.lstm_bias = VectorXd::Zero(4 * hidden_dim);
    p.out_weight = MatrixXd::Zero(vocab_size, hidden_dim);
    p.out_bias = VectorXd::Zero(vocab_size);
    return p;
}

NicParameters NicParameters::initialize(int feature_dim, int vocab_size, int embed_dim,
                                        int hidden_dim, std::uint64_t seed) {
    NicParameters p = zeros(feature_dim, vocab_size, embed_dim, hidden_dim);
    std::mt19937_64 rng(seed);
    fill_uniform(p.image_proj, xavier_limit(feature_dim, embed_dim), rng);
    fill_uniform(p.embedding, xavier_limit(vocab_size, embed_dim), rng);
    fill_uniform(p.lstm_weight, xavier_limit(embed_dim + hidden_dim, hidden_dim), rng);
    fill_uniform(p.out_weight, xavier_limit(hidden_dim, vocab_size), rng);
    p.lstm_bias.segment(hidden_dim, hidden_dim).setOnes();
    return p;
}

std::vector<ParamBlock> NicParameters::blocks() {
    auto view = [](const char* name, auto& m) {
        return ParamBlock{name, Eigen::Map<MatrixXd>(m.data(), m.rows(), m.cols())};
    };
    return {view("image_proj", image_proj), view("image_bias", image_bias),
            view("embedding", embedding),   view("lstm_weight", lstm_weight),
            view("lstm_bias", lstm_bias),   view("out_weight", out_weight),
            view("out_bias", out_bias)};
}

std::vector<ConstParamBlock> NicParameters::blocks() const {
    auto view = [](const char* name, const auto& m) {
        return ConstParamBlock{name, Eigen::Map<const MatrixXd>(m.data(), m.rows(), m.cols())};
    };
    return {view("image_proj", image_proj), view("image_bias", image_bias),
            view("embedding", embedding),   view("lstm_weight", lstm_weight),
            view("lstm_bias", lstm_bias),   view("out_weight", out_weight),
            view("out_bias", out_bias)};
}

void NicParameters::check_consistent() const {
    const auto E = image_proj.rows();
    const auto H = lstm_bias.size() / 4;
    const auto V = out_bias.size();
    const bool ok = image_bias.size() == E && embedding.rows() == V && embedding.cols() == E &&
                    lstm_weight.rows() == 4 * H && lstm_weight.cols() == E + H &&
                    lstm_bias.size() == 4 * H && out_weight.rows() == V &&
                    out_weight.cols() == H && E > 0 && H > 0 && V > 0;
    if (!ok) throw Error("inconsistent NIC parameter dimensions");
    for (const auto& b : blocks()) {
        if (!b.values.allFinite()) throw Error(std::string("non-finite NIC parameter block ") + b.name);
    }
}

LstmState LstmState::zero(int hidden_dim) {
    return {VectorXd::Zero(hidden_dim), VectorXd::Zero(hidden_dim)};
}

// ------------------------------------------------------------------- forward

StepOutput forward_step(const NicParameters& params, const LstmState& state,
                        const VectorXd& input) {
    if (input.size() != params.embed_dim() || state.hidden.size() != params.hidden_dim() ||
        state.cell.size() != params.hidden_dim()) {
        throw Error("forward_step dimension mismatch");
    }
    StepCache s = lstm_forward(params, state.hidden, state.cell, input);
    VectorXd logits = params.out_bias;
    logits.noalias() += params.out_weight * s.hidden;
    require_finite(logits);
    StepOutput out{{std::move(s.hidden), std::move(s.cell)}, log_softmax(logits)};
    require_finite(out.log_probs);
    return out;
}

VectorXd project_image(const NicParameters& params, const std::vector<double>& features) {
    if (static_cast<int>(features.size()) != params.feature_dim()) {
        throw Error("image feature dimension " + std::to_string(features.size()) +
                    " does not match model dimension " + std::to_string(params.feature_dim()));
    }
    Eigen::Map<const VectorXd> f(features.data(), static_cast<Eigen::Index>(features.size()));
    VectorXd x = params.image_bias;
    x.noalias() += params.image_proj * f;
    return x;
}

StepOutput prime_decoder(const NicParameters& params, const std::vector<double>& features) {
    StepOutput image_step =
        forward_step(params, LstmState::zero(params.hidden_dim()), project_image(params, features));
    VectorXd start = params.embedding.row(Vocabulary::kStart).transpose();
    return forward_step(params, image_step.state, start);
}

const std::vector<TokenId>& barred_tokens() {
    static const std::vector<TokenId> ids{Vocabulary::kPad, Vocabulary::kStart, Vocabulary::kUnk};
    return ids;
}

VectorXd masked_log_softmax(const VectorXd& log_probs, const std::vector<TokenId>& barred) {
    VectorXd masked = log_probs;
    for (TokenId id : barred) {
        if (id >= 0 && id < masked.size()) masked(id) = -std::numeric_limits<double>::infinity();
    }
    const double top = masked.maxCoeff();
    if (!std::isfinite(top)) throw Error("every token is barred from emission");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < masked.size(); ++i) {
        if (std::isfinite(masked(i))) sum += std::exp(masked(i) - top);
    }
    const double lse = top + std::log(sum);
    for (Eigen::Index i = 0; i < masked.size(); ++i) {
        if (std::isfinite(masked(i))) masked(i) -= lse;
    }
    return masked;
}

// ------------------------------------------------------------------ training

double sequence_loss(const NicParameters& params, const std::vector<double>& features,
                     const IdSequence& ids, NicParameters* grad) {
    if (ids.size() < 2) throw Error("training sequence needs START and END");
    const int H = params.hidden_dim();
    const int E = params.embed_dim();
    const int V = params.vocab_size();
    for (TokenId id : ids) {
        if (id < 0 || id >= V) throw Error("token id out of range in training sequence");
    }

    // Step 0 consumes the projected image; steps 1..T consume ids[0..T-1]
    // and are scored against ids[1..T].
    const std::size_t steps = ids.size() - 1;
    std::vector<StepCache> cache;
    std::vector<VectorXd> probs;
    cache.reserve(steps + 1);
    probs.reserve(steps);

    cache.push_back(lstm_forward(params, VectorXd::Zero(H), VectorXd::Zero(H),
                                 project_image(params, features)));
    double loss = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const StepCache& prev = cache.back();
        VectorXd x = params.embedding.row(ids[t]).transpose();
        cache.push_back(lstm_forward(params, prev.hidden, prev.cell, x));
        VectorXd logits = params.out_bias;
        logits.noalias() += params.out_weight * cache.back().hidden;
        require_finite(logits);
        VectorXd lp = log_softmax(logits);
        loss -= lp(ids[t + 1]);
        probs.push_back(lp.array().exp());
    }
    if (!std::isfinite(loss)) throw Error("numerical overflow");
    if (!grad) return loss;

    *grad = NicParameters::zeros(params.feature_dim(), V, E, H);
    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    for (std::size_t s = cache.size(); s-- > 0;) {
        const StepCache& c = cache[s];
        VectorXd dh = dh_next;
        if (s > 0) {
            VectorXd dlogits = probs[s - 1];
            dlogits(ids[s]) -= 1.0;
            grad->out_weight.noalias() += dlogits * c.hidden.transpose();
            grad->out_bias += dlogits;
            dh.noalias() += params.out_weight.transpose() * dlogits;
        }
        VectorXd d_o = dh.cwiseProduct(c.cell_tanh);
        VectorXd dc = dh.cwiseProduct(c.gate_o)
                          .cwiseProduct((1.0 - c.cell_tanh.array().square()).matrix()) +
                      dc_next;
        VectorXd d_i = dc.cwiseProduct(c.gate_g);
        VectorXd d_g = dc.cwiseProduct(c.gate_i);
        VectorXd d_f = dc.cwiseProduct(c.cell_prev);
        dc_next = dc.cwiseProduct(c.gate_f);

        VectorXd dpre(4 * H);
        dpre.segment(0, H) = d_i.array() * c.gate_i.array() * (1.0 - c.gate_i.array());
        dpre.segment(H, H) = d_f.array() * c.gate_f.array() * (1.0 - c.gate_f.array());
        dpre.segment(2 * H, H) = d_o.array() * c.gate_o.array() * (1.0 - c.gate_o.array());
        dpre.segment(3 * H, H) = d_g.array() * (1.0 - c.gate_g.array().square());

        grad->lstm_weight.leftCols(E).noalias() += dpre * c.input.transpose();
        grad->lstm_weight.rightCols(H).noalias() += dpre * c.hidden_prev.transpose();
        grad->lstm_bias += dpre;
        VectorXd dx = params.lstm_weight.leftCols(E).transpose() * dpre;
        dh_next = params.lstm_weight.rightCols(H).transpose() * dpre;

        if (s == 0) {
            Eigen::Map<const VectorXd> f(features.data(),
                                         static_cast<Eigen::Index>(features.size()));
            grad->image_proj.noalias() += dx * f.transpose();
            grad->image_bias += dx;
        } else {
            grad->embedding.row(ids[s - 1]) += dx.transpose();
        }
    }
    return loss;
}

std::vector<TrainingExample> make_training_examples(const std::vector<const ImageRecord*>& images,
                                                    const Vocabulary& vocab) {
    std::vector<TrainingExample> out;
    for (const ImageRecord* rec : images) {
        for (const auto& ref : rec->references) out.push_back({&rec->features, encode(ref, vocab)});
    }
    return out;
}

NicParameters train_nic(const std::vector<TrainingExample>& examples, int vocab_size,
                        const NicHyperParams& hp, TrainingReport* report) {
    if (examples.empty()) throw Error("empty NIC training set");
    if (hp.epochs < 0) throw Error("epochs must be >= 0");
    const int feature_dim = static_cast<int>(examples.front().features->size());
    NicParameters params =
        NicParameters::initialize(feature_dim, vocab_size, hp.embed_dim, hp.hidden_dim, hp.seed);
    NicParameters grad;

    // Separate stream from the initializer so changing the epoch count never
    // perturbs the initial weights.
    std::mt19937_64 shuffle_rng(hp.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double lr = hp.learning_rate;
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t tokens = 0;
        for (std::size_t idx : order) {
            const auto& ex = examples[idx];
            double loss = 0.0;
            try {
                loss = sequence_loss(params, *ex.features, ex.ids, &grad);
            } catch (const Error&) {
                throw Error("NIC training diverged at epoch " + std::to_string(epoch));
            }
            epoch_loss += loss;
            tokens += ex.ids.size() - 1;

            double sq = 0.0;
            for (const auto& b : grad.blocks()) sq += b.values.squaredNorm();
            const double norm = std::sqrt(sq);
            double scale = lr;
            if (hp.clip_norm > 0.0 && norm > hp.clip_norm) scale *= hp.clip_norm / norm;
            if (scale != 0.0) {
                auto pb = params.blocks();
                auto gb = grad.blocks();
                for (std::size_t b = 0; b < pb.size(); ++b) pb[b].values -= scale * gb[b].values;
            }
        }
        const double mean = epoch_loss / static_cast<double>(tokens);
        if (!std::isfinite(mean)) {
            throw Error("NIC training diverged at epoch " + std::to_string(epoch));
        }
        if (report) {
            report->epoch_loss.push_back(mean);
            report->epoch_learning_rate.push_back(lr);
        }
        if (mean < best) {
            best = mean;
        } else {
            lr *= hp.lr_decay;
        }
    }
    return params;
}

// ------------------------------------------------------------------ decoding

namespace {

DecodedCaption finish_caption(IdSequence ids, std::vector<double> log_probs,
                              const Vocabulary& vocab) {
    DecodedCaption out;
    out.finished = !ids.empty() && ids.back() == Vocabulary::kEnd;
    out.tokens = decode(ids, vocab);
    out.total_log_prob = 0.0;
    for (double lp : log_probs) out.total_log_prob += lp;
    out.normalized_log_prob =
        ids.empty() ? 0.0 : out.total_log_prob / static_cast<double>(ids.size());
    out.ids = std::move(ids);
    out.token_log_probs = std::move(log_probs);
    return out;
}

struct Hypothesis {
    IdSequence ids;
    std::vector<double> log_probs;
    double score = 0.0;
    LstmState state;
    VectorXd next;  // masked log-probs for the following token
};

bool ranks_before(double score_a, const IdSequence& a, double score_b, const IdSequence& b) {
    if (score_a != score_b) return score_a > score_b;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

DecodedCaption decode_greedy(const NicParameters& params, const std::vector<double>& features,
                             const Vocabulary& vocab, std::size_t max_len) {
    StepOutput step = prime_decoder(params, features);
    IdSequence ids;
    std::vector<double> log_probs;
    for (std::size_t t = 0; t < max_len; ++t) {
        VectorXd lp = masked_log_softmax(step.log_probs, barred_tokens());
        Eigen::Index best = 0;
        lp.maxCoeff(&best);  // first maximal index, i.e. lowest id on ties
        ids.push_back(static_cast<TokenId>(best));
        log_probs.push_back(lp(best));
        if (best == Vocabulary::kEnd) break;
        VectorXd x = params.embedding.row(best).transpose();
        step = forward_step(params, step.state, x);
    }
    return finish_caption(std::move(ids), std::move(log_probs), vocab);
}

DecodedCaption decode_beam(const NicParameters& params, const std::vector<double>& features,
                           const Vocabulary& vocab, std::size_t beam, std::size_t max_len) {
    if (beam < 1) throw Error("beam size must be >= 1");
    StepOutput root = prime_decoder(params, features);
    std::vector<Hypothesis> active(1);
    active[0].state = std::move(root.state);
    active[0].next = masked_log_softmax(root.log_probs, barred_tokens());

    std::vector<Hypothesis> finished;
    std::vector<Hypothesis> truncated;

    struct Expansion {
        std::size_t parent;
        TokenId token;
        double score;
        IdSequence ids;
    };

    for (std::size_t t = 0; t < max_len && !active.empty(); ++t) {
        std::vector<Expansion> expansions;
        for (std::size_t h = 0; h < active.size(); ++h) {
            const VectorXd& lp = active[h].next;
            for (Eigen::Index v = 0; v < lp.size(); ++v) {
                if (!std::isfinite(lp(v))) continue;
                IdSequence ids = active[h].ids;
                ids.push_back(static_cast<TokenId>(v));
                expansions.push_back({h, static_cast<TokenId>(v), active[h].score + lp(v),
                                      std::move(ids)});
            }
        }
        const std::size_t keep = std::min(beam, expansions.size());
        std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep),
                          expansions.end(), [](const Expansion& a, const Expansion& b) {
                              return ranks_before(a.score, a.ids, b.score, b.ids);
                          });
        expansions.resize(keep);

        std::vector<Hypothesis> survivors;
        for (auto& e : expansions) {
            const Hypothesis& parent = active[e.parent];
            Hypothesis child;
            child.ids = std::move(e.ids);
            child.log_probs = parent.log_probs;
            child.log_probs.push_back(parent.next(e.token));
            child.score = e.score;
            if (e.token == Vocabulary::kEnd) {
                finished.push_back(std::move(child));
                continue;
            }
            if (t + 1 == max_len) {
                truncated.push_back(std::move(child));
                continue;
            }
            VectorXd x = params.embedding.row(e.token).transpose();
            StepOutput step = forward_step(params, parent.state, x);
            child.state = std::move(step.state);
            child.next = masked_log_softmax(step.log_probs, barred_tokens());
            survivors.push_back(std::move(child));
        }
        active = std::move(survivors);
    }

    const std::vector<Hypothesis>& pool = finished.empty() ? truncated : finished;
    const Hypothesis* winner = &pool.front();
    for (const auto& h : pool) {
        if (ranks_before(h.score, h.ids, winner->score, winner->ids)) winner = &h;
    }
    return finish_caption(winner->ids, winner->log_probs, vocab);
}

// --------------------------------------------------------------- checkpoints

void save_nic(const NicCheckpoint& ckpt, const std::string& path) {
    ckpt.params.check_consistent();
    nlohmann::ordered_json j;
    j["magic"] = kCheckpointMagic;
    j["version"] = kCheckpointVersion;
    j["vocab_hash"] = ckpt.vocab_hash;
    j["dims"] = {{"feature_dim", ckpt.params.feature_dim()},
                 {"vocab_size", ckpt.params.vocab_size()},
                 {"embed_dim", ckpt.params.embed_dim()},
                 {"hidden_dim", ckpt.params.hidden_dim()}};
    j["hyperparams"] = {{"embed_dim", ckpt.hyper.embed_dim},
                        {"hidden_dim", ckpt.hyper.hidden_dim},
                        {"learning_rate", ckpt.hyper.learning_rate},
                        {"lr_decay", ckpt.hyper.lr_decay},
                        {"epochs", ckpt.hyper.epochs},
                        {"clip_norm", ckpt.hyper.clip_norm},
                        {"seed", ckpt.hyper.seed}};
    j["epoch_loss"] = ckpt.epoch_loss;
    auto& blocks = j["blocks"];
    blocks = nlohmann::ordered_json::object();
    for (const auto& b : ckpt.params.blocks()) {
        std::vector<double> flat(b.values.data(), b.values.data() + b.values.size());
        blocks[b.name] = {{"rows", b.values.rows()}, {"cols", b.values.cols()}, {"data", flat}};
    }
    write_file(path, j.dump() + "\n");
}

NicCheckpoint load_nic(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path, 1, std::string("invalid NIC checkpoint: ") + e.what());
    }
    if (!j.is_object() || j.value("magic", "") != kCheckpointMagic) {
        throw Error(path + ": not a NIC checkpoint");
    }
    if (j.value("version", 0) != kCheckpointVersion) {
        throw Error(path + ": unsupported NIC checkpoint version");
    }
    try {
        NicCheckpoint ckpt;
        const auto& d = j.at("dims");
        ckpt.params = NicParameters::zeros(d.at("feature_dim"), d.at("vocab_size"),
                                           d.at("embed_dim"), d.at("hidden_dim"));
        for (auto& b : ckpt.params.blocks()) {
            const auto& jb = j.at("blocks").at(b.name);
            if (jb.at("rows").get<Eigen::Index>() != b.values.rows() ||
                jb.at("cols").get<Eigen::Index>() != b.values.cols()) {
                throw Error(path + ": block " + b.name + " has wrong shape");
            }
            auto data = jb.at("data").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(data.size()) != b.values.size()) {
                throw Error(path + ": block " + b.name + " has wrong size");
            }
            std::copy(data.begin(), data.end(), b.values.data());
        }
        const auto& h = j.at("hyperparams");
        ckpt.hyper.embed_dim = h.at("embed_dim");
        ckpt.hyper.hidden_dim = h.at("hidden_dim");
        ckpt.hyper.learning_rate = h.at("learning_rate");
        ckpt.hyper.lr_decay = h.at("lr_decay");
        ckpt.hyper.epochs = h.at("epochs");
        ckpt.hyper.clip_norm = h.at("clip_norm");
        ckpt.hyper.seed = h.at("seed");
        ckpt.vocab_hash = j.at("vocab_hash");
        ckpt.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
        ckpt.params.check_consistent();
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path, 1, std::string("malformed NIC checkpoint: ") + e.what());
    }
}

}  // namespace hybridcap
