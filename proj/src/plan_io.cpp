#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "patchmix/mixing.hpp"

namespace patchmix {

namespace {

constexpr const char* kPlanMagic = "patchmix-plan";
constexpr int kPlanVersion = 1;

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
void write_row(std::ostream& os, const char* name, const std::vector<T>& row) {
    os << name;
    for (const T& v : row) {
        if constexpr (std::is_floating_point_v<T>) os << ' ' << format_real(v);
        else os << ' ' << v;
    }
    os << '\n';
}

}  // namespace

void write_plan_text(std::ostream& os, const MixPlan& plan) {
    os << kPlanMagic << ' ' << kPlanVersion << '\n';
    os << "N " << plan.cfg.batch << '\n';
    os << "M " << plan.cfg.mix_count << '\n';
    os << "T " << plan.cfg.tokens << '\n';
    os << "mtm_window_wraps " << (plan.mtm_window_wraps ? 1 : 0) << '\n';
    write_row(os, "perm", plan.perm.forward());
    write_row(os, "perm_inverse", plan.perm.inverse());
    write_row(os, "group_bounds", plan.group_bounds);
    write_row(os, "q", plan.q);
    for (const auto& r : plan.source_map) write_row(os, "source_map", r);
    for (const auto& r : plan.y_mto) write_row(os, "y_mto", r);
    for (const auto& r : plan.y_mtm) write_row(os, "y_mtm", r);
    for (const auto& r : plan.w_mtm) write_row(os, "w_mtm", r);
}

MixPlan read_plan_text(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("plan text: empty input");
    {
        std::istringstream hs(line);
        std::string magic;
        int version = 0;
        if (!(hs >> magic >> version) || magic != kPlanMagic || version != kPlanVersion) {
            throw std::runtime_error("plan text: bad header '" + line + "'");
        }
    }
    std::map<std::string, std::vector<std::vector<std::string>>> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string name, tok;
        if (!(ls >> name)) continue;
        std::vector<std::string> vals;
        while (ls >> tok) vals.push_back(tok);
        rows[name].push_back(std::move(vals));
    }
    auto ints = [&](const std::vector<std::string>& toks, const std::string& name) {
        std::vector<std::size_t> out;
        for (const auto& t : toks) {
            std::size_t v = 0;
            const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc{} || p != t.data() + t.size()) {
                throw std::runtime_error("plan text: bad integer '" + t + "' in " + name);
            }
            out.push_back(v);
        }
        return out;
    };
    auto single = [&](const std::string& name) -> const std::vector<std::string>& {
        const auto it = rows.find(name);
        if (it == rows.end() || it->second.size() != 1) {
            throw std::runtime_error("plan text: expected exactly one '" + name + "' line");
        }
        return it->second.front();
    };
    auto scalar = [&](const std::string& name) {
        const auto v = ints(single(name), name);
        if (v.size() != 1) throw std::runtime_error("plan text: '" + name + "' must hold one value");
        return v.front();
    };
    auto table = [&](const std::string& name) {
        Table<std::size_t> out;
        for (const auto& r : rows[name]) out.push_back(ints(r, name));
        return out;
    };

    MixPlan plan;
    plan.cfg = MixConfig{scalar("M"), scalar("N"), scalar("T")};
    plan.mtm_window_wraps = scalar("mtm_window_wraps") != 0;
    plan.perm = Permutation(ints(single("perm"), "perm"));
    if (ints(single("perm_inverse"), "perm_inverse") != plan.perm.inverse()) {
        throw std::runtime_error("plan text: perm_inverse is not the inverse of perm");
    }
    plan.group_bounds = ints(single("group_bounds"), "group_bounds");
    plan.q = ints(single("q"), "q");
    plan.source_map = table("source_map");
    plan.y_mto = table("y_mto");
    plan.y_mtm = table("y_mtm");
    for (const auto& r : rows["w_mtm"]) {
        std::vector<double> vals;
        for (const auto& t : r) vals.push_back(std::stod(t));
        plan.w_mtm.push_back(std::move(vals));
    }
    if (plan.source_map.size() != plan.cfg.batch || plan.y_mto.size() != plan.cfg.batch ||
        plan.y_mtm.size() != plan.cfg.batch || plan.w_mtm.size() != plan.cfg.batch) {
        throw std::runtime_error("plan text: per-image tables must have N rows");
    }
    return plan;
}

}  // namespace patchmix
