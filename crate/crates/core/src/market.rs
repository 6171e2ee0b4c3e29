//! Pre-dispatch, role extraction and the joint energy-transactions problem.

use std::fmt;
use std::str::FromStr;

use crate::conic::{ConicProblem, Family, LinExpr, VarId};
use crate::error::{Error, Result};
use crate::model::{add_microgrid, exchange_cost, MicrogridVars, PreparedMicrogrid};
use crate::netmodel::HOURS;

pub const FAMILY_INTERACTION: Family = Family("interaction");

#[derive(Debug, Clone, PartialEq)]
pub struct PriceBook {
    /// DSO selling price ζ₀.
    pub zeta_dso: Vec<f64>,
    /// Price paid by the DSO for surplus ζ̂₀.
    pub zeta_surplus: Vec<f64>,
    /// Selling price of each microgrid.
    pub zeta_mg: Vec<Vec<f64>>,
}

impl PriceBook {
    pub fn validate(&self) -> Result<()> {
        let curves = [&self.zeta_dso, &self.zeta_surplus]
            .into_iter()
            .chain(self.zeta_mg.iter());
        for c in curves {
            if c.len() != HOURS {
                return Err(Error::Schema(format!(
                    "price curve has {} entries, expected {HOURS}",
                    c.len()
                )));
            }
            if let Some(p) = c.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(Error::Schema(format!("negative or non-finite price {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Buyer,
    Seller,
    Idle,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Buyer => "buyer",
            Role::Seller => "seller",
            Role::Idle => "idle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleEntry {
    pub role: Role,
    /// Demand for buyers, surplus magnitude for sellers, zero when idle (market pu).
    pub cap: f64,
}

/// Role of every microgrid (outer index) at every hour (inner index, hour 1 first).
#[derive(Debug, Clone, PartialEq)]
pub struct RoleSchedule {
    pub entries: Vec<Vec<RoleEntry>>,
}

impl RoleSchedule {
    pub fn get(&self, mg: usize, t: usize) -> RoleEntry {
        self.entries[mg][t - 1]
    }

    pub fn hours_with(&self, mg: usize, role: Role) -> Vec<usize> {
        (1..=HOURS)
            .filter(|&t| self.get(mg, t).role == role)
            .collect()
    }
}

/// Sign rule on the pre-dispatch exchange, in market pu.
pub fn extract_roles(exchange: &[Vec<f64>], tolerance: f64) -> RoleSchedule {
    let entries = exchange
        .iter()
        .map(|p| {
            p.iter()
                .map(|&x| {
                    if x > tolerance {
                        RoleEntry {
                            role: Role::Buyer,
                            cap: x,
                        }
                    } else if x < -tolerance {
                        RoleEntry {
                            role: Role::Seller,
                            cap: -x,
                        }
                    } else {
                        RoleEntry {
                            role: Role::Idle,
                            cap: 0.0,
                        }
                    }
                })
                .collect()
        })
        .collect();
    RoleSchedule { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseSet {
    /// Surplus bought at the DSO selling price.
    C1,
    /// Surplus bought below the DSO selling price.
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Trade price enters as a buyer cost.
    S1,
    /// Trade price enters as seller revenue.
    S2,
}

impl Strategy {
    pub fn sign(self) -> f64 {
        match self {
            Strategy::S1 => 1.0,
            Strategy::S2 => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaseConfig {
    pub case_set: CaseSet,
    /// Number of competing sellers (1: MG2 only, 2: MG2 and MG3).
    pub competitors: usize,
    pub strategy: Strategy,
}

impl CaseConfig {
    /// The eight benchmark cases in report order.
    pub fn all() -> Vec<CaseConfig> {
        let mut out = Vec::new();
        for case_set in [CaseSet::C1, CaseSet::C2] {
            for strategy in [Strategy::S1, Strategy::S2] {
                for competitors in [1, 2] {
                    out.push(CaseConfig {
                        case_set,
                        competitors,
                        strategy,
                    });
                }
            }
        }
        out
    }

    /// Trading edges `(seller, buyer)` as microgrid indices: the first
    /// `competitors` microgrids after the first one sell to the first one.
    pub fn edges(&self, n_mg: usize) -> Vec<(usize, usize)> {
        (1..n_mg).take(self.competitors).map(|s| (s, 0)).collect()
    }

    pub fn prices(&self, dso: &[f64], c2_surplus: &[f64], mg: &[Vec<f64>]) -> PriceBook {
        PriceBook {
            zeta_dso: dso.to_vec(),
            zeta_surplus: match self.case_set {
                CaseSet::C1 => dso.to_vec(),
                CaseSet::C2 => c2_surplus.to_vec(),
            },
            zeta_mg: mg.to_vec(),
        }
    }
}

impl fmt::Display for CaseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = match self.case_set {
            CaseSet::C1 => "C1",
            CaseSet::C2 => "C2",
        };
        let sign = match self.strategy {
            Strategy::S1 => '+',
            Strategy::S2 => '-',
        };
        write!(f, "{set}.{}{sign}", self.competitors)
    }
}

impl FromStr for CaseConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::CaseName(s.to_string());
        let (set, rest) = s.split_once('.').ok_or_else(bad)?;
        let case_set = match set {
            "C1" | "c1" => CaseSet::C1,
            "C2" | "c2" => CaseSet::C2,
            _ => return Err(bad()),
        };
        let strategy = match rest.chars().last() {
            Some('+') => Strategy::S1,
            Some('-') => Strategy::S2,
            _ => return Err(bad()),
        };
        let competitors = match &rest[..rest.len() - 1] {
            "1" => 1,
            "2" => 2,
            _ => return Err(bad()),
        };
        Ok(CaseConfig {
            case_set,
            competitors,
            strategy,
        })
    }
}

/// Counterparty of a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Agent {
    Dso,
    /// Microgrid by index.
    Mg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub hour: usize,
    pub seller: Agent,
    pub buyer: Agent,
    /// Market pu·h.
    pub quantity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TradeLedger {
    pub trades: Vec<Trade>,
}

impl TradeLedger {
    /// Zeroes quantities below `tolerance` (solver residue) and drops the
    /// resulting empty microgrid-to-microgrid rows.
    pub fn cleaned(mut self, tolerance: f64) -> Self {
        for t in &mut self.trades {
            if t.quantity.abs() < tolerance {
                t.quantity = 0.0;
            }
        }
        self.trades.retain(|t| {
            t.quantity != 0.0 || !matches!((t.seller, t.buyer), (Agent::Mg(_), Agent::Mg(_)))
        });
        self
    }

    pub fn peer_trades(&self) -> impl Iterator<Item = &Trade> {
        self.trades
            .iter()
            .filter(|t| matches!((t.seller, t.buyer), (Agent::Mg(_), Agent::Mg(_))))
    }

    /// Total bought (`true`) or sold (`false`) by a microgrid in one hour.
    pub fn volume(&self, mg: usize, hour: usize, bought: bool) -> f64 {
        self.trades
            .iter()
            .filter(|t| {
                t.hour == hour && (if bought { t.buyer } else { t.seller }) == Agent::Mg(mg)
            })
            .map(|t| t.quantity)
            .sum()
    }
}

/// Price of a trade: the seller's price, or the DSO's selling or surplus price.
pub fn trade_price(trade: &Trade, prices: &PriceBook) -> f64 {
    let t = trade.hour - 1;
    match (trade.seller, trade.buyer) {
        (Agent::Dso, _) => prices.zeta_dso[t],
        (Agent::Mg(_), Agent::Dso) => prices.zeta_surplus[t],
        (Agent::Mg(i), Agent::Mg(_)) => prices.zeta_mg[i][t],
    }
}

/// Hourly cost, revenue and profit of one microgrid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Settlement {
    pub cost: f64,
    pub revenue: f64,
}

impl Settlement {
    pub fn profit(&self) -> f64 {
        self.revenue - self.cost
    }
}

/// `[microgrid][hour − 1]` settlements.
pub fn settlement_report(
    ledger: &TradeLedger,
    prices: &PriceBook,
    n_mg: usize,
) -> Vec<Vec<Settlement>> {
    let mut out = vec![vec![Settlement::default(); HOURS]; n_mg];
    for trade in &ledger.trades {
        let cash = trade_price(trade, prices) * trade.quantity;
        let t = trade.hour - 1;
        if let Agent::Mg(b) = trade.buyer {
            out[b][t].cost += cash;
        }
        if let Agent::Mg(s) = trade.seller {
            out[s][t].revenue += cash;
        }
    }
    out
}

/// Ratio that converts a microgrid's own per-unit power to market per-unit.
pub fn market_scale(prep: &PreparedMicrogrid, market_base: f64) -> f64 {
    prep.base_power() / market_base
}

/// Per-microgrid pre-dispatch: minimize `Σ_t ζ₀(t)·P̂(t)` without interactions.
pub fn build_pds(
    prep: &PreparedMicrogrid,
    zeta_dso: &[f64],
    market_base: f64,
) -> Result<(ConicProblem, MicrogridVars)> {
    let mut p = ConicProblem::new();
    let vars = add_microgrid(&mut p, prep)?;
    p.add_objective(
        &exchange_cost(&vars, zeta_dso, market_scale(prep, market_base)),
        1.0,
    );
    Ok((p, vars))
}

/// Trade variables of one hour.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HourTrades {
    /// `(microgrid, var)` purchases from the DSO.
    pub from_dso: Vec<(usize, VarId)>,
    /// `(microgrid, var)` surplus sold to the DSO.
    pub to_dso: Vec<(usize, VarId)>,
    /// `(seller, buyer, var)`.
    pub peer: Vec<(usize, usize, VarId)>,
}

/// Interaction rows for one hour given each microgrid's exchange expression
/// (market pu). Only role-consistent trade variables are created.
pub fn interaction_rows(
    p: &mut ConicProblem,
    roles: &RoleSchedule,
    edges: &[(usize, usize)],
    exchange: &[LinExpr],
    t: usize,
) -> HourTrades {
    let mut trades = HourTrades::default();
    for &(s, b) in edges {
        if roles.get(s, t).role == Role::Seller && roles.get(b, t).role == Role::Buyer {
            let v = p.add_var(
                format!("t{t}.trade[{s}->{b}]"),
                0.0,
                f64::INFINITY,
                FAMILY_INTERACTION,
            );
            trades.peer.push((s, b, v));
        }
    }
    for (i, ex) in exchange.iter().enumerate() {
        let entry = roles.get(i, t);
        match entry.role {
            Role::Idle => p.add_eq(ex.clone(), 0.0, FAMILY_INTERACTION),
            Role::Buyer => {
                let own = p.add_var(
                    format!("t{t}.dso->{i}"),
                    0.0,
                    f64::INFINITY,
                    FAMILY_INTERACTION,
                );
                trades.from_dso.push((i, own));
                let mut total = LinExpr::var(own);
                for &(_, b, v) in &trades.peer {
                    if b == i {
                        total.add_term(v, 1.0);
                    }
                }
                cap_row(p, &total, entry.cap, &format!("t{t}.in[{i}]"));
                let mut row = ex.clone();
                row.add_expr(&total, -1.0);
                p.add_eq(row, 0.0, FAMILY_INTERACTION);
            }
            Role::Seller => {
                let own = p.add_var(
                    format!("t{t}.{i}->dso"),
                    0.0,
                    f64::INFINITY,
                    FAMILY_INTERACTION,
                );
                trades.to_dso.push((i, own));
                let mut total = LinExpr::var(own);
                for &(s, _, v) in &trades.peer {
                    if s == i {
                        total.add_term(v, 1.0);
                    }
                }
                cap_row(p, &total, entry.cap, &format!("t{t}.out[{i}]"));
                let mut row = ex.clone();
                row.add_expr(&total, 1.0);
                p.add_eq(row, 0.0, FAMILY_INTERACTION);
            }
        }
    }
    trades
}

fn cap_row(p: &mut ConicProblem, total: &LinExpr, cap: f64, name: &str) {
    let sum = p.add_var(name, 0.0, cap, FAMILY_INTERACTION);
    let mut row = LinExpr::var(sum);
    row.add_expr(total, -1.0);
    p.add_eq(row, 0.0, FAMILY_INTERACTION);
}

#[derive(Debug, Clone)]
pub struct EtsVars {
    pub microgrids: Vec<MicrogridVars>,
    /// One entry per hour.
    pub trades: Vec<HourTrades>,
}

impl EtsVars {
    pub fn ledger(&self, x: &[f64]) -> TradeLedger {
        let mut trades = Vec::new();
        for (t0, h) in self.trades.iter().enumerate() {
            let hour = t0 + 1;
            for &(i, v) in &h.from_dso {
                trades.push(Trade {
                    hour,
                    seller: Agent::Dso,
                    buyer: Agent::Mg(i),
                    quantity: x[v],
                });
            }
            for &(i, v) in &h.to_dso {
                trades.push(Trade {
                    hour,
                    seller: Agent::Mg(i),
                    buyer: Agent::Dso,
                    quantity: x[v],
                });
            }
            for &(s, b, v) in &h.peer {
                trades.push(Trade {
                    hour,
                    seller: Agent::Mg(s),
                    buyer: Agent::Mg(b),
                    quantity: x[v],
                });
            }
        }
        TradeLedger { trades }
    }
}

/// Joint transactions problem over all microgrids with fixed roles.
pub fn build_ets(
    preps: &[PreparedMicrogrid],
    roles: &RoleSchedule,
    prices: &PriceBook,
    config: &CaseConfig,
    market_base: f64,
) -> Result<(ConicProblem, EtsVars)> {
    let mut p = ConicProblem::new();
    let microgrids = preps
        .iter()
        .map(|prep| add_microgrid(&mut p, prep))
        .collect::<Result<Vec<_>>>()?;
    let edges = config.edges(preps.len());
    let sigma = config.strategy.sign();
    let mut trades = Vec::with_capacity(HOURS);
    let mut objective = LinExpr::new();
    for t in 1..=HOURS {
        let exchange: Vec<LinExpr> = preps
            .iter()
            .zip(&microgrids)
            .map(|(prep, v)| LinExpr::new().term(v.p_pcc(t), market_scale(prep, market_base)))
            .collect();
        let h = interaction_rows(&mut p, roles, &edges, &exchange, t);
        for &(_, v) in &h.from_dso {
            objective.add_term(v, prices.zeta_dso[t - 1]);
        }
        for &(_, v) in &h.to_dso {
            objective.add_term(v, -prices.zeta_surplus[t - 1]);
        }
        for &(s, _, v) in &h.peer {
            objective.add_term(v, sigma * prices.zeta_mg[s][t - 1]);
        }
        trades.push(h);
    }
    p.add_objective(&objective, 1.0);
    Ok((p, EtsVars { microgrids, trades }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cleaned_ledger_drops_residue() {
        let ledger = TradeLedger {
            trades: vec![
                Trade {
                    hour: 1,
                    seller: Agent::Dso,
                    buyer: Agent::Mg(0),
                    quantity: 3e-9,
                },
                Trade {
                    hour: 1,
                    seller: Agent::Mg(1),
                    buyer: Agent::Mg(0),
                    quantity: 2e-9,
                },
                Trade {
                    hour: 2,
                    seller: Agent::Mg(1),
                    buyer: Agent::Mg(0),
                    quantity: 0.25,
                },
            ],
        }
        .cleaned(1e-7);
        assert_eq!(ledger.trades.len(), 2);
        assert_eq!(ledger.trades[0].quantity, 0.0);
        assert_eq!(ledger.peer_trades().count(), 1);
    }
    use crate::conic::{solve, Status, Tolerances};

    #[test]
    fn role_sign_rule() {
        let mut p = vec![0.0; HOURS];
        p[0] = 0.3;
        p[1] = -0.4;
        p[2] = 1e-8;
        p[3] = -1e-7;
        let r = extract_roles(&[p], 1e-7);
        assert_eq!(
            r.get(0, 1),
            RoleEntry {
                role: Role::Buyer,
                cap: 0.3
            }
        );
        assert_eq!(
            r.get(0, 2),
            RoleEntry {
                role: Role::Seller,
                cap: 0.4
            }
        );
        assert_eq!(r.get(0, 3).role, Role::Idle);
        assert_eq!(r.get(0, 4).role, Role::Idle);
    }

    #[test]
    fn case_names_round_trip() {
        let all = CaseConfig::all();
        assert_eq!(all.len(), 8);
        for c in all {
            assert_eq!(c.to_string().parse::<CaseConfig>().unwrap(), c);
        }
        let c: CaseConfig = "C1.2-".parse().unwrap();
        assert_eq!(c.strategy, Strategy::S2);
        assert_eq!(c.edges(3), vec![(1, 0), (2, 0)]);
        assert!("C3.1+".parse::<CaseConfig>().is_err());
        assert!("C1.3+".parse::<CaseConfig>().is_err());
        assert!("C1.1".parse::<CaseConfig>().is_err());
    }

    fn flat_prices(n: usize, mg: f64) -> PriceBook {
        PriceBook {
            zeta_dso: vec![3.0; HOURS],
            zeta_surplus: vec![3.0; HOURS],
            zeta_mg: vec![vec![mg; HOURS]; n],
        }
    }

    #[test]
    fn empty_ledger_settles_to_zero() {
        let s = settlement_report(&TradeLedger::default(), &flat_prices(2, 1.0), 2);
        assert!(s
            .iter()
            .flatten()
            .all(|x| x.cost == 0.0 && x.revenue == 0.0));
    }

    #[test]
    fn single_peer_trade_settlement() {
        let ledger = TradeLedger {
            trades: vec![Trade {
                hour: 5,
                seller: Agent::Mg(1),
                buyer: Agent::Mg(0),
                quantity: 0.1,
            }],
        };
        let s = settlement_report(&ledger, &flat_prices(2, 2.0), 2);
        assert!((s[0][4].cost - 0.2).abs() < 1e-15);
        assert!((s[1][4].revenue - 0.2).abs() < 1e-15);
        assert!((s[1][4].profit() - 0.2).abs() < 1e-15);
        assert!((s[0][4].profit() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn surplus_only_hour_revenue() {
        let mut prices = flat_prices(1, 2.0);
        prices.zeta_surplus[0] = 1.0;
        let ledger = TradeLedger {
            trades: vec![Trade {
                hour: 1,
                seller: Agent::Mg(0),
                buyer: Agent::Dso,
                quantity: 0.5,
            }],
        };
        let s = settlement_report(&ledger, &prices, 1);
        assert!((s[0][0].revenue - 0.5).abs() < 1e-15);
    }

    /// Two-agent hour with fixed exchanges as variables: seller surplus 0.4, buyer demand 0.3.
    fn toy(strategy: Strategy, surplus_price: f64) -> (Status, f64, HourTrades, Vec<f64>) {
        let mut entries = vec![
            vec![
                RoleEntry {
                    role: Role::Idle,
                    cap: 0.0
                };
                HOURS
            ];
            3
        ];
        entries[0][0] = RoleEntry {
            role: Role::Buyer,
            cap: 0.3,
        };
        entries[1][0] = RoleEntry {
            role: Role::Seller,
            cap: 0.4,
        };
        entries[2][0] = RoleEntry {
            role: Role::Seller,
            cap: 0.2,
        };
        let roles = RoleSchedule { entries };
        let mut p = ConicProblem::new();
        let x: Vec<VarId> = (0..3)
            .map(|i| p.add_free_var(format!("x{i}"), Family::OTHER))
            .collect();
        p.add_eq(LinExpr::var(x[0]), 0.3, Family::OTHER);
        let ex: Vec<LinExpr> = x.iter().map(|&v| LinExpr::var(v)).collect();
        let h = interaction_rows(&mut p, &roles, &[(1, 0), (2, 0)], &ex, 1);
        let mut obj = LinExpr::new();
        for &(_, v) in &h.from_dso {
            obj.add_term(v, 3.0);
        }
        for &(_, v) in &h.to_dso {
            obj.add_term(v, -surplus_price);
        }
        for &(s, _, v) in &h.peer {
            obj.add_term(v, strategy.sign() * if s == 1 { 2.0 } else { 1.0 });
        }
        p.add_objective(&obj, 1.0);
        let sol = solve(&p, &Tolerances::default());
        (sol.status, sol.objective, h, sol.values)
    }

    #[test]
    fn buyer_hour_creates_no_sale_variables() {
        let (_, _, h, _) = toy(Strategy::S1, 3.0);
        assert!(h.to_dso.iter().all(|&(i, _)| i != 0));
        assert!(h.peer.iter().all(|&(s, _, _)| s != 0));
        assert_eq!(h.from_dso.len(), 1);
    }

    #[test]
    fn seller_caps_hold_and_strategies_order() {
        let (st1, obj1, h1, x1) = toy(Strategy::S1, 3.0);
        let (st2, obj2, h2, x2) = toy(Strategy::S2, 3.0);
        assert_eq!(st1, Status::Optimal);
        assert_eq!(st2, Status::Optimal);
        // S1 with equal DSO prices: trading never pays.
        assert!(h1.peer.iter().all(|&(_, _, v)| x1[v] < 1e-7));
        // S2 routes the buyer's demand to the higher-priced seller.
        let sold: f64 = h2
            .peer
            .iter()
            .filter(|p| p.0 == 1)
            .map(|&(_, _, v)| x2[v])
            .sum();
        assert!((sold - 0.3).abs() < 1e-6);
        for &(i, v) in &h2.to_dso {
            let peer: f64 = h2
                .peer
                .iter()
                .filter(|p| p.0 == i)
                .map(|&(_, _, w)| x2[w])
                .sum();
            let cap = if i == 1 { 0.4 } else { 0.2 };
            assert!(x2[v] + peer <= cap + 1e-6);
        }
        assert!(obj2 < obj1);
    }
}
