#include "ccpdm/xva.hpp"

#include "ccpdm/stats.hpp"

#include <Eigen/Cholesky>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <set>

namespace ccpdm {

double XvaConfig::gamma_of(const std::string& id) const {
    auto it = gamma.find(id);
    if (it != gamma.end()) return it->second;
    it = gamma.find("*");
    if (it != gamma.end()) return it->second;
    return 0.393;
}

void XvaConfig::validate() const {
    if (alpha_df <= alpha_im) throw std::invalid_argument("xva: alpha_df must exceed alpha_im");
    if (alpha_kva <= alpha_df || alpha_kva >= 1.0)
        throw std::invalid_argument("xva: alpha_kva must lie in (alpha_df, 1)");
    if (rho_cr < 0.0 || rho_cr >= 1.0) throw std::invalid_argument("xva: rho_cr must lie in [0,1)");
    if (funding_blend < 0.0 || funding_blend > 1.0)
        throw std::invalid_argument("xva: funding_blend must lie in [0,1]");
    if (n_batches <= 0 || n_paths <= 0 || n_paths % n_batches != 0)
        throw std::invalid_argument("xva: n_paths must be a positive multiple of n_batches");
    for (const auto& [id, g] : gamma) {
        if (g < 0.0 || g >= 1.0)
            throw std::invalid_argument("xva: default probability of " + id + " must lie in [0,1)");
    }
}

double XvaResult::sum_over(const std::vector<std::string>& ids) const {
    double s = 0.0;
    for (const auto& id : ids) {
        auto it = values.find(id);
        if (it != values.end()) s += it->second.total();
    }
    return s;
}

namespace {

// Quantile of the standardized (unit-variance) market margin.
double market_quantile(const EllipseKind& kind, double alpha) {
    if (kind.is_gaussian()) return stats::norm_ppf(alpha);
    return stats::t_ppf(alpha, kind.nu) * std::sqrt((kind.nu - 2.0) / kind.nu);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct BatchRng {
    std::mt19937_64 gen;
    explicit BatchRng(std::uint64_t seed, std::uint64_t batch)
        : gen(splitmix64(splitmix64(seed) ^ splitmix64(batch + 0x51ed2701ULL))) {}
    double uniform() {
        // (0,1) strictly, 53-bit resolution
        return (static_cast<double>(gen() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }
    double normal() { return stats::norm_ppf(uniform()); }
    // Chi-square via Marsaglia-Tsang gamma(k/2, 2).
    double chisq(double k) {
        const double a = 0.5 * k;
        double boost = 1.0;
        double d = a;
        if (a < 1.0) {
            boost = std::pow(uniform(), 1.0 / a);
            d = a + 1.0;
        }
        d -= 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return 2.0 * boost * d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return 2.0 * boost * d * v;
        }
    }
};

struct EntityTable {
    std::vector<std::string> ids;
    std::vector<double> thresh;  // default iff X <= thresh; -inf when gamma = 0
    std::map<std::string, int> index;

    int add(const std::string& id, double gamma_pd) {
        auto it = index.find(id);
        if (it != index.end()) return it->second;
        const int k = static_cast<int>(ids.size());
        ids.push_back(id);
        thresh.push_back(gamma_pd > 0.0 ? stats::norm_ppf(gamma_pd)
                                        : -std::numeric_limits<double>::infinity());
        index[id] = k;
        return k;
    }
};

struct BatchAccum {
    std::vector<double> sum_jc;    // per participant
    std::vector<long long> n_j;    // surviving paths
    std::vector<double> es;        // batch tail mean of C given survival
    std::vector<char> es_valid;
};

struct Plan {
    const CreditState* state = nullptr;
    const XvaConfig* cfg = nullptr;
    EntityTable entities;
    std::vector<int> book_entity;       // book -> entity
    std::vector<int> bilateral_entity;  // bilateral -> entity
    std::vector<std::string> participants;
    std::map<std::string, int> pidx;
    std::vector<int> book_part;
    std::vector<int> bilateral_part;
    std::vector<int> part_entity;  // participant -> its entity (-1 if none, treated immortal)
    int n_pools = 0;
};

Plan make_plan(const CreditState& state, const XvaConfig& cfg) {
    Plan plan;
    plan.state = &state;
    plan.cfg = &cfg;
    auto part_index = [&](const std::string& id) {
        auto it = plan.pidx.find(id);
        if (it != plan.pidx.end()) return it->second;
        const int k = static_cast<int>(plan.participants.size());
        plan.participants.push_back(id);
        plan.pidx[id] = k;
        return k;
    };
    for (const auto& b : state.books) {
        plan.book_part.push_back(part_index(b.participant));
        plan.book_entity.push_back(plan.entities.add(b.participant, b.gamma_pd));
        plan.n_pools = std::max(plan.n_pools, b.pool + 1);
    }
    for (const auto& b : state.bilaterals) {
        plan.bilateral_part.push_back(part_index(b.participant));
        plan.bilateral_entity.push_back(plan.entities.add(b.counterparty, b.cpty_gamma));
    }
    plan.part_entity.assign(plan.participants.size(), -1);
    for (std::size_t i = 0; i < state.books.size(); ++i)
        plan.part_entity[plan.book_part[i]] = plan.book_entity[i];
    for (std::size_t i = 0; i < state.bilaterals.size(); ++i) {
        int& pe = plan.part_entity[plan.bilateral_part[i]];
        if (pe < 0) pe = plan.entities.add(state.bilaterals[i].participant, 0.0);
    }
    return plan;
}

BatchAccum run_batch(const Plan& plan, long long paths, std::uint64_t batch_id) {
    const CreditState& st = *plan.state;
    const XvaConfig& cfg = *plan.cfg;
    const int nb = static_cast<int>(st.books.size());
    const int nbl = static_cast<int>(st.bilaterals.size());
    const int ne = static_cast<int>(plan.entities.ids.size());
    const int np = static_cast<int>(plan.participants.size());
    const int m = st.m;
    const double sr = std::sqrt(cfg.rho_cr), si = std::sqrt(1.0 - cfg.rho_cr);
    const double t_std = st.market.is_gaussian()
                             ? 1.0
                             : std::sqrt((st.market.nu - 2.0) / st.market.nu);

    BatchRng rng(cfg.seed, batch_id);
    BatchAccum acc;
    acc.sum_jc.assign(np, 0.0);
    acc.n_j.assign(np, 0);
    acc.es.assign(np, 0.0);
    acc.es_valid.assign(np, 0);

    std::vector<std::vector<double>> samples(np);
    for (auto& v : samples) v.reserve(paths);

    std::vector<char> dead(ne);
    std::vector<double> z(m), lgd(nb), pool_sum(plan.n_pools), denom(plan.n_pools), c_part(np);
    std::vector<double> pool_after(plan.n_pools);

    for (long long path = 0; path < paths; ++path) {
        const double eps = rng.normal();
        for (int e = 0; e < ne; ++e) {
            const double x = sr * eps + si * rng.normal();
            dead[e] = x <= plan.entities.thresh[e] ? 1 : 0;
        }
        double t_mix = 1.0;
        if (!st.market.is_gaussian()) {
            // Standardized multivariate t: common sqrt(nu/V) mixing factor.
            t_mix = std::sqrt(st.market.nu / rng.chisq(st.market.nu)) * t_std;
        }
        for (int k = 0; k < m; ++k) z[k] = rng.normal() * t_mix;

        std::fill(pool_sum.begin(), pool_sum.end(), 0.0);
        std::fill(denom.begin(), denom.end(), 0.0);
        for (int i = 0; i < nb; ++i) {
            const MemberBook& bk = st.books[i];
            double l = 0.0;
            if (dead[plan.book_entity[i]]) {
                double e_house = bk.shift - bk.im;
                for (int k = 0; k < m; ++k) e_house -= bk.b(k) * z[k];
                double loss = std::max(e_house, 0.0);
                if (bk.b_client.size() > 0) {
                    double e_cl = bk.shift_client - bk.im_client;
                    for (int k = 0; k < m; ++k) e_cl -= bk.b_client(k) * z[k];
                    loss += std::max(e_cl, 0.0);
                }
                l = std::max(loss - bk.df, 0.0);
            } else {
                denom[bk.pool] += bk.wkey;
            }
            lgd[i] = l;
            pool_sum[bk.pool] += l;
        }
        for (int p = 0; p < plan.n_pools; ++p) {
            double junior = 0.0;
            auto it = st.junior_buffer.find(p);
            if (it != st.junior_buffer.end()) junior = it->second;
            pool_after[p] = std::max(pool_sum[p] - junior, 0.0);
        }

        std::fill(c_part.begin(), c_part.end(), 0.0);
        for (int i = 0; i < nb; ++i) {
            const MemberBook& bk = st.books[i];
            if (dead[plan.book_entity[i]]) continue;
            const double ps = pool_sum[bk.pool];
            if (ps <= 0.0) continue;
            const double scale = pool_after[bk.pool] / ps;
            double w;
            if (denom[bk.pool] > 0.0) {
                w = bk.wkey / denom[bk.pool];
            } else {
                // all allocation keys vanished: equal split among survivors
                int nsurv = 0;
                for (int j = 0; j < nb; ++j)
                    if (st.books[j].pool == bk.pool && !dead[plan.book_entity[j]]) ++nsurv;
                w = nsurv > 0 ? 1.0 / nsurv : 0.0;
            }
            c_part[plan.book_part[i]] += w * (ps - lgd[i]) * scale;
        }
        for (int i = 0; i < nbl; ++i) {
            const BilateralBook& bl = st.bilaterals[i];
            // idiosyncratic draw happens unconditionally to keep the stream layout fixed
            const double idio = bl.idio_sd > 0.0 ? bl.idio_sd * rng.normal() : 0.0;
            if (!dead[plan.bilateral_entity[i]]) continue;
            double e = bl.shift + idio - bl.im;
            for (int k = 0; k < m; ++k) e -= bl.b(k) * z[k];
            c_part[plan.bilateral_part[i]] += std::max(e, 0.0);
        }

        for (int p = 0; p < np; ++p) {
            const int e = plan.part_entity[p];
            if (e >= 0 && dead[e]) continue;
            acc.sum_jc[p] += c_part[p];
            acc.n_j[p] += 1;
            samples[p].push_back(c_part[p]);
        }
    }

    for (int p = 0; p < np; ++p) {
        auto& v = samples[p];
        if (v.empty()) continue;
        const long long k = std::max<long long>(
            1, static_cast<long long>(std::ceil((1.0 - cfg.alpha_kva) * v.size())));
        std::nth_element(v.begin(), v.begin() + (v.size() - k), v.end());
        acc.es[p] = std::accumulate(v.end() - k, v.end(), 0.0) / static_cast<double>(k);
        acc.es_valid[p] = 1;
    }
    return acc;
}

}  // namespace

XvaResult compute_xva(const CreditState& state, const XvaConfig& cfg, bool parallel) {
    cfg.validate();
    const Plan plan = make_plan(state, cfg);
    const int np = static_cast<int>(plan.participants.size());
    const int nbatch = cfg.n_batches;
    const long long per_batch = cfg.n_paths / nbatch;

    std::vector<BatchAccum> batches(nbatch);
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int b = 0; b < nbatch; ++b) batches[b] = run_batch(plan, per_batch, b);
    } else {
        for (int b = 0; b < nbatch; ++b) batches[b] = run_batch(plan, per_batch, b);
    }

    // Ordered reduction over batch index keeps results worker-count invariant.
    XvaResult out;
    for (int p = 0; p < np; ++p) {
        const std::string& id = plan.participants[p];
        double gamma_pd = 0.0;
        for (std::size_t i = 0; i < state.books.size(); ++i)
            if (plan.book_part[i] == p) gamma_pd = state.books[i].gamma_pd;

        double sum_jc = 0.0;
        long long n_j = 0;
        std::vector<double> batch_means, batch_es;
        for (int b = 0; b < nbatch; ++b) {
            sum_jc += batches[b].sum_jc[p];
            n_j += batches[b].n_j[p];
            if (batches[b].n_j[p] > 0)
                batch_means.push_back(batches[b].sum_jc[p] / batches[b].n_j[p]);
            if (batches[b].es_valid[p]) batch_es.push_back(batches[b].es[p]);
        }
        if ((1.0 - cfg.alpha_kva) * static_cast<double>(n_j) < 100.0)
            throw InsufficientTail("xva: too few surviving tail samples for the KVA of " + id);

        XvaValues v;
        const double surv_norm = 1.0 / (1.0 - gamma_pd);
        // E[C | survival]: the J-weighted mean over surviving paths. The identity
        // CVA = (1-gamma)^-1 E[J C] holds because n_j/n_paths -> 1-gamma.
        const double e_jc = sum_jc / static_cast<double>(cfg.n_paths);
        v.cva = surv_norm * e_jc;
        double var_b = 0.0;
        for (double mb : batch_means) {
            const double d = mb - (n_j > 0 ? sum_jc / n_j : 0.0);
            var_b += d * d;
        }
        if (batch_means.size() > 1) {
            v.cva_se = std::sqrt(var_b / (batch_means.size() - 1) / batch_means.size());
        }
        double es_avg = 0.0;
        for (double e : batch_es) es_avg += e;
        es_avg /= std::max<std::size_t>(1, batch_es.size());
        const double kva_factor = cfg.hurdle / (1.0 + cfg.hurdle) * surv_norm;
        v.kva = kva_factor * (es_avg - v.cva);
        double var_es = 0.0;
        for (double e : batch_es) var_es += (e - es_avg) * (e - es_avg);
        if (batch_es.size() > 1)
            v.kva_se = kva_factor * std::sqrt(var_es / (batch_es.size() - 1) / batch_es.size());

        double mva_base = 0.0, er_otc = 0.0;
        for (std::size_t i = 0; i < state.books.size(); ++i) {
            if (plan.book_part[i] == p) {
                mva_base += state.books[i].mva_base;
                er_otc += state.books[i].er_otc;
            }
        }
        const double gamma_tilde = cfg.funding_blend * gamma_pd;
        v.mva = gamma_tilde * mva_base;
        v.fva = gamma_pd / (1.0 + gamma_pd) *
                std::max(er_otc - (v.cva + v.mva) - (es_avg - v.cva), 0.0);
        out.values[id] = v;
    }
    return out;
}

MarginProfile compute_margins(const Equilibrium& eq, const XvaConfig& cfg, const AssetModel& asset) {
    MarginProfile mp;
    const double z_im = market_quantile(asset.ellipse, cfg.alpha_im);
    const double z_df = market_quantile(asset.ellipse, cfg.alpha_df);
    Eigen::LLT<MatrixXd> llt(asset.gamma);
    double sloim_total = 0.0;
    std::vector<std::pair<std::string, double>> sloims;
    for (const auto& [id, q] : eq.positions) {
        const double sd = std::sqrt(std::max(q.dot(asset.gamma * q), 0.0));
        const double shift = q.dot(eq.price - asset.mu);
        mp.im[id] = shift + sd * z_im;
        const double sl = sd * (z_df - z_im);
        mp.sloim[id] = sl;
        sloim_total += sl;
        sloims.emplace_back(id, sl);
    }
    double cover2 = 0.0;
    std::vector<double> vals;
    for (const auto& [id, sl] : sloims) vals.push_back(sl);
    std::sort(vals.rbegin(), vals.rend());
    for (std::size_t i = 0; i < std::min<std::size_t>(2, vals.size()); ++i) cover2 += vals[i];
    for (const auto& [id, sl] : sloims) {
        mp.df[id] = sloim_total > 0.0 ? sl / sloim_total * cover2 : 0.0;
    }
    return mp;
}

namespace {

MatrixXd gamma_sqrt(const AssetModel& asset) {
    Eigen::LLT<MatrixXd> llt(asset.gamma);
    if (llt.info() != Eigen::Success) throw SingularGamma("xva: gamma is not positive definite");
    return llt.matrixL();
}

struct BookInputs {
    VectorXd q;      // position carried over the period
    double shift;    // deterministic exposure component q.(price-mu) + flows
};

// Assemble one pool's member books: margins are the VaR of the full exposure,
// the allocation key is the (hypothetical) SLOIM so that DF-pro-rata allocation
// stays defined in uncollateralized studies.
void add_pool_books(CreditState& st, const Scenario& s, const XvaConfig& cfg, int pool,
                    const std::map<std::string, BookInputs>& books,
                    const std::map<std::string, double>& gamma_override) {
    const MatrixXd L = gamma_sqrt(s.asset);
    const double z_im = market_quantile(s.asset.ellipse, cfg.alpha_im);
    const double z_df = market_quantile(s.asset.ellipse, cfg.alpha_df);

    double sloim_total = 0.0, cover2 = 0.0;
    std::map<std::string, double> sloim;
    std::vector<double> vals;
    for (const auto& [id, bi] : books) {
        const double sd = std::sqrt(std::max(bi.q.dot(s.asset.gamma * bi.q), 0.0));
        sloim[id] = sd * (z_df - z_im);
        sloim_total += sloim[id];
        vals.push_back(sloim[id]);
    }
    std::sort(vals.rbegin(), vals.rend());
    for (std::size_t i = 0; i < std::min<std::size_t>(2, vals.size()); ++i) cover2 += vals[i];

    for (const auto& [id, bi] : books) {
        MemberBook bk;
        bk.participant = id;
        bk.pool = pool;
        auto ov = gamma_override.find(id);
        bk.gamma_pd = ov != gamma_override.end() ? ov->second : cfg.gamma_of(id);
        bk.b = L.transpose() * bi.q;
        bk.shift = bi.shift;
        const double sd = bk.b.norm();
        const double im = bi.shift + sd * z_im;
        const double df = sloim_total > 0.0 ? sloim[id] / sloim_total * cover2 : 0.0;
        if (cfg.collateralized) {
            bk.im = im;
            bk.df = df;
            bk.mva_base = im + df;
        }
        bk.wkey = sloim[id];
        st.books.push_back(std::move(bk));
    }
}

std::vector<std::string> member_ids(const Scenario& s, const Exchange& ex) {
    std::vector<std::string> out;
    for (const auto& id : ex.members) {
        if (s.participants.at(id).role != Role::SimpleParticipant) out.push_back(id);
    }
    return out;
}

// Client-account legs and bilateral client exposures from the cleared positions
// of simple participants, at the given price and leg flows.
void add_client_blocks(CreditState& st, const Scenario& s, const XvaConfig& cfg, int pool,
                       const Exchange& ex, const std::map<std::string, VectorXd>& positions,
                       const VectorXd& price, const std::map<std::string, double>& flow) {
    const MatrixXd L = gamma_sqrt(s.asset);
    const double z_im = market_quantile(s.asset.ellipse, cfg.alpha_im);
    std::map<std::string, VectorXd> client_account;
    for (const auto& bid : ex.members) {
        const Participant& b = s.participants.at(bid);
        if (b.role != Role::SimpleParticipant || !positions.count(bid)) continue;
        const VectorXd qb = positions.at(bid);
        double fl = 0.0;
        if (auto it = flow.find(bid); it != flow.end()) fl = it->second;
        for (const auto& [aid, frac] : b.cleared_by) {
            const VectorXd slice = frac * qb;
            if (!client_account.count(aid))
                client_account[aid] = VectorXd::Zero(s.asset.n_assets());
            client_account[aid] += slice;
            // bilateral exposure of the clearing member to its client
            BilateralBook bl;
            bl.participant = aid;
            bl.counterparty = bid;
            bl.cpty_gamma = cfg.gamma_of(bid);
            bl.b = L.transpose() * slice;
            bl.shift = slice.dot(price - s.asset.mu) + frac * fl;
            if (cfg.collateralized) bl.im = bl.shift + bl.b.norm() * z_im;
            st.bilaterals.push_back(std::move(bl));
        }
    }
    for (auto& bk : st.books) {
        if (bk.pool != pool) continue;
        auto it = client_account.find(bk.participant);
        if (it == client_account.end()) continue;
        bk.b_client = L.transpose() * it->second;
        bk.shift_client = it->second.dot(price - s.asset.mu);
        const double sd = bk.b_client.norm();
        if (cfg.collateralized) {
            bk.im_client = bk.shift_client + sd * z_im;
            bk.mva_base += bk.im_client;
        }
    }
}

// OTC end-user block: one composite counterparty per member holding the
// member's receivable; active only when a default probability is configured.
void add_otc_blocks(CreditState& st, const Scenario& s, const XvaConfig& cfg,
                    const std::vector<std::string>& ids) {
    const MatrixXd L = gamma_sqrt(s.asset);
    Eigen::LLT<MatrixXd> llt(s.asset.gamma);
    for (const auto& id : ids) {
        const Participant& p = s.participants.at(id);
        for (auto& bk : st.books)
            if (bk.participant == id) bk.er_otc = p.er;
        const auto it = cfg.gamma.find("otc:" + id);
        if (it == cfg.gamma.end() || it->second <= 0.0) continue;
        const VectorXd beta = llt.solve(p.cov_r);
        const double resid = std::max(p.var_r - p.cov_r.dot(beta), 0.0);
        BilateralBook bl;
        bl.participant = id;
        bl.counterparty = "otc:" + id;
        bl.cpty_gamma = it->second;
        bl.b = -L.transpose() * beta;  // receivable rises with P when cov_r > 0
        bl.shift = p.er;
        bl.idio_sd = std::sqrt(resid);
        st.bilaterals.push_back(std::move(bl));
    }
}

}  // namespace

CreditState build_pre_state(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                            const XvaConfig& cfg) {
    CreditState st;
    st.m = s.asset.n_assets();
    st.market = s.asset.ellipse;
    int pool = 0;
    for (const auto& ex : s.exchanges) {
        const Equilibrium& eq = pre.at(ex.id);
        std::map<std::string, BookInputs> books;
        for (const auto& id : member_ids(s, ex)) {
            const VectorXd& q = eq.positions.at(id);
            books[id] = {q, q.dot(eq.price - s.asset.mu)};
        }
        add_pool_books(st, s, cfg, pool, books, {});
        add_client_blocks(st, s, cfg, pool, ex, eq.positions, eq.price, {});
        add_otc_blocks(st, s, cfg, member_ids(s, ex));
        ++pool;
    }
    return st;
}

CreditState build_post_state(const Scenario& s, const ResolutionOutcome& outcome,
                             const XvaConfig& cfg) {
    CreditState st;
    st.m = s.asset.n_assets();
    st.market = s.asset.ellipse;
    int pool = 0;
    for (const auto& [exid, post_eq] : outcome.post) {
        const Equilibrium& pre_eq = outcome.pre.at(exid);
        std::map<std::string, BookInputs> books;
        std::map<std::string, double> gamma_override;
        for (const auto& [id, q] : post_eq.positions) {
            const bool known = s.participants.count(id) > 0;
            if (known && s.participants.at(id).role == Role::SimpleParticipant) continue;
            // Exposure: q'(p' - P) plus the margin flow (q + dq_l).(p - p'),
            // which liquidity_cost already attributed per participant.
            double flow = 0.0;
            if (auto it = outcome.lc_per_participant.find(id); it != outcome.lc_per_participant.end())
                flow = it->second;
            books[id] = {q, q.dot(post_eq.price - s.asset.mu) + flow};
            if (!known) gamma_override[id] = 0.0;  // the hedging CCP cannot default
        }
        add_pool_books(st, s, cfg, pool, books, gamma_override);
        std::map<std::string, double> flows(outcome.lc_per_participant.begin(),
                                            outcome.lc_per_participant.end());
        const Exchange& ex = s.exchange(exid);
        add_client_blocks(st, s, cfg, pool, ex, post_eq.positions, post_eq.price, flows);
        std::vector<std::string> ids;
        for (const auto& [id, bi] : books)
            if (s.participants.count(id)) ids.push_back(id);
        add_otc_blocks(st, s, cfg, ids);
        ++pool;
    }
    return st;
}

CreditState build_auction_state(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                                const XvaConfig& cfg, const std::string& taker,
                                const VectorXd& package) {
    CreditState st;
    st.m = s.asset.n_assets();
    st.market = s.asset.ellipse;
    const Exchange& home = s.home_exchange();
    const Equilibrium& eq = pre.at(home.id);
    const MarginProfile pre_margins = compute_margins(eq, cfg, s.asset);
    const MatrixXd L = gamma_sqrt(s.asset);
    const double z_im = market_quantile(s.asset.ellipse, cfg.alpha_im);
    const double z_df = market_quantile(s.asset.ellipse, cfg.alpha_df);

    // Recompute the cover-2 fund on the new books for the funded-margin (MVA) side.
    std::map<std::string, double> sloim_new;
    double sloim_total = 0.0;
    for (const auto& id : member_ids(s, home)) {
        if (id == s.defaulter) continue;
        VectorXd q = eq.positions.at(id);
        if (id == taker) q += package;
        const double sd = (L.transpose() * q).norm();
        sloim_new[id] = sd * (z_df - z_im);
        sloim_total += sloim_new[id];
    }
    std::vector<double> vals;
    for (auto& [id, v] : sloim_new) vals.push_back(v);
    std::sort(vals.rbegin(), vals.rend());
    double cover2 = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(2, vals.size()); ++i) cover2 += vals[i];

    for (const auto& id : member_ids(s, home)) {
        if (id == s.defaulter) continue;
        MemberBook bk;
        bk.participant = id;
        bk.pool = 0;
        bk.gamma_pd = cfg.gamma_of(id);
        VectorXd q = eq.positions.at(id);
        if (id == taker) q += package;
        bk.b = L.transpose() * q;
        bk.shift = q.dot(eq.price - s.asset.mu);
        if (cfg.collateralized) {
            bk.im = pre_margins.im.at(id);   // margin calls lag the transfer
            bk.df = pre_margins.df.at(id);
            const double im_new = bk.shift + bk.b.norm() * z_im;
            bk.mva_base = im_new + (sloim_total > 0.0 ? sloim_new[id] / sloim_total * cover2 : 0.0);
        }
        bk.wkey = pre_margins.sloim.at(id);  // allocation keys lag as well
        st.books.push_back(std::move(bk));
    }
    if (cfg.collateralized) st.junior_buffer[0] = pre_margins.df.at(s.defaulter);
    add_client_blocks(st, s, cfg, 0, home, eq.positions, eq.price, {});
    std::vector<std::string> ids;
    for (const auto& id : member_ids(s, home))
        if (id != s.defaulter) ids.push_back(id);
    add_otc_blocks(st, s, cfg, ids);
    return st;
}

namespace {

bool id_less(const std::string& a, const std::string& b) {
    // numeric-aware so that member "2" precedes "10"
    char* ea = nullptr;
    char* eb = nullptr;
    const long la = std::strtol(a.c_str(), &ea, 10);
    const long lb = std::strtol(b.c_str(), &eb, 10);
    if (*ea == '\0' && *eb == '\0') return la < lb;
    return a < b;
}

}  // namespace

AuctionOutcome auction_cost(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                            const XvaConfig& cfg, const VectorXd& package, bool parallel) {
    AuctionOutcome out;
    if (package.lpNorm<Eigen::Infinity>() <= 1e-9) {
        out.taker = "";
        out.ac = 0.0;  // a fully replicated package transfers no risk
        return out;
    }
    const Exchange& home = s.home_exchange();
    std::vector<std::string> candidates;
    for (const auto& id : member_ids(s, home))
        if (id != s.defaulter) candidates.push_back(id);
    if (candidates.empty()) throw NoSurvivors("auction_cost: no surviving members");
    std::sort(candidates.begin(), candidates.end(), id_less);

    const XvaResult base = compute_xva(build_pre_state(s, pre, cfg), cfg, parallel);
    for (const auto& taker : candidates) {
        const XvaResult cf = compute_xva(build_auction_state(s, pre, cfg, taker, package), cfg, parallel);
        double delta = 0.0;
        for (const auto& id : candidates) delta += cf.values.at(id).total() - base.values.at(id).total();
        out.ranking.emplace_back(taker, delta);
    }
    std::stable_sort(out.ranking.begin(), out.ranking.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });
    out.taker = out.ranking.front().first;
    out.ac = out.ranking.front().second;
    return out;
}

XvaReport compute_ftp(const Scenario& s, const ResolutionOutcome& outcome, const XvaConfig& cfg,
                      bool run_auction, bool parallel) {
    XvaReport rep;
    rep.pre = compute_xva(build_pre_state(s, outcome.pre, cfg), cfg, parallel);
    rep.post = compute_xva(build_post_state(s, outcome, cfg), cfg, parallel);

    std::set<std::string> skip(outcome.defaulters.begin(), outcome.defaulters.end());
    std::set<std::string> ids;
    for (const auto& [id, v] : rep.pre.values)
        if (s.participants.count(id)) ids.insert(id);
    for (const auto& [id, v] : rep.post.values)
        if (s.participants.count(id)) ids.insert(id);
    for (const auto& id : ids) {
        if (skip.count(id)) continue;
        const double before = rep.pre.values.count(id) ? rep.pre.values.at(id).total() : 0.0;
        const double after = rep.post.values.count(id) ? rep.post.values.at(id).total() : 0.0;
        rep.delta_xva[id] = after - before;
        rep.sum_delta_xva += after - before;
    }

    if (run_auction) {
        VectorXd package = outcome.q_d;
        for (const auto& [exid, eq] : outcome.post) {
            for (const auto& [id, q] : eq.positions) {
                if (!s.participants.count(id)) package += q;  // the CCP hedge travels with it
            }
        }
        rep.auction = auction_cost(s, outcome.pre, cfg, package, parallel);
        rep.ac = rep.auction->ac;
    }
    rep.mc = outcome.mc_total;
    rep.cc = rep.sum_delta_xva + rep.ac;
    rep.ftp = rep.mc + rep.cc;
    return rep;
}

XvaReport compute_pure_auction(const Scenario& s, const std::map<std::string, Equilibrium>& pre,
                               const XvaConfig& cfg, bool parallel) {
    XvaReport rep;
    const Exchange& home = s.home_exchange();
    const VectorXd q_d = pre.at(home.id).positions.at(s.defaulter);
    rep.pre = compute_xva(build_pre_state(s, pre, cfg), cfg, parallel);
    rep.auction = auction_cost(s, pre, cfg, q_d, parallel);
    rep.ac = rep.auction->ac;
    rep.mc = 0.0;
    rep.cc = rep.ac;
    rep.ftp = rep.ac;
    return rep;
}

}  // namespace ccpdm
