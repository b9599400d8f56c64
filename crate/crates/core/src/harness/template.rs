//! Transaction templates: which items a transaction touches and how.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::TemplateKind;
use crate::store::{Constraint, ItemSpec};
use crate::txn::WriteIntent;
use crate::types::{item, CcClass, ItemId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    /// Plain read.
    Read,
    /// Read, then write the read value plus the given amount (O and P items).
    Update(i64),
    /// Read, then commit a commutative delta (R items).
    Delta(i64),
    /// Escrow read reserving the delta, committed at write time (E items).
    Escrow(i64),
}

impl Intent {
    fn write(self) -> Option<WriteIntent> {
        match self {
            Intent::Read => None,
            Intent::Update(d) | Intent::Delta(d) | Intent::Escrow(d) => Some(WriteIntent::Add(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub item: ItemId,
    pub intent: Intent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TpccKind {
    NewOrder,
    Payment,
    Delivery,
    CreditCheck,
    UpdateStockLevel,
    ReadStockLevel,
}

impl TpccKind {
    pub const ALL: [TpccKind; 6] = [
        TpccKind::NewOrder,
        TpccKind::Payment,
        TpccKind::Delivery,
        TpccKind::CreditCheck,
        TpccKind::UpdateStockLevel,
        TpccKind::ReadStockLevel,
    ];

    /// Cards of this kind in one 100-card deck.
    pub fn cards(self) -> usize {
        match self {
            TpccKind::NewOrder | TpccKind::Payment => 42,
            _ => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TpccKind::NewOrder => "new_order",
            TpccKind::Payment => "payment",
            TpccKind::Delivery => "delivery",
            TpccKind::CreditCheck => "credit_check",
            TpccKind::UpdateStockLevel => "update_stock_level",
            TpccKind::ReadStockLevel => "read_stock_level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnTemplate {
    pub name: &'static str,
    pub read_only: bool,
    pub accesses: Vec<Access>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("read-only template {0} writes")]
    ReadOnlyWrites(&'static str),
    #[error("template {0} accesses {1} twice")]
    Repeated(&'static str, ItemId),
    #[error("template {0} needs item {1}, which is not in the store")]
    MissingItem(&'static str, ItemId),
}

impl TxnTemplate {
    /// The write set handed over at submit time. Writes only touch read items
    /// by construction.
    pub fn writes(&self) -> Vec<(ItemId, WriteIntent)> {
        self.accesses
            .iter()
            .filter_map(|a| a.intent.write().map(|w| (a.item.clone(), w)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.read_only && self.accesses.iter().any(|a| a.intent != Intent::Read) {
            return Err(TemplateError::ReadOnlyWrites(self.name));
        }
        for (i, a) in self.accesses.iter().enumerate() {
            if self.accesses[..i].iter().any(|b| b.item == a.item) {
                return Err(TemplateError::Repeated(self.name, a.item.clone()));
            }
        }
        Ok(())
    }

    /// Same accesses without escrow: reservations become plain reads with a
    /// delta write, as an all-optimistic engine would run them.
    pub fn without_escrow(&self) -> Self {
        let mut t = self.clone();
        for a in &mut t.accesses {
            if let Intent::Escrow(d) = a.intent {
                a.intent = Intent::Delta(d);
            }
        }
        t
    }
}

pub const HOT_ITEM: &str = "hot";

pub fn single_item() -> TxnTemplate {
    TxnTemplate {
        name: "single",
        read_only: false,
        accesses: vec![Access {
            item: item(HOT_ITEM),
            intent: Intent::Update(1),
        }],
    }
}

pub fn single_item_specs(class: CcClass) -> Vec<ItemSpec> {
    vec![ItemSpec::new(item(HOT_ITEM), class, 0, None)]
}

pub const CUSTOMER: &str = "Customer";
pub const CUSTOMER_CREDIT: &str = "CustomerCredit";
pub const CUSTOMER_BALANCE: &str = "CustomerBalance";
pub const WAREHOUSE_YTD: &str = "WarehouseYTD";
pub const DISTRICT_YTD: &str = "DistrictYTD";
pub const STOCK_QUANTITY: &str = "StockQuantity";

/// One scalar row per hot-spot field.
pub fn tpcc_specs() -> Vec<ItemSpec> {
    vec![
        ItemSpec::new(item(CUSTOMER), CcClass::P, 0, None),
        ItemSpec::new(item(CUSTOMER_CREDIT), CcClass::P, 0, None),
        ItemSpec::new(item(CUSTOMER_BALANCE), CcClass::R, 0, None),
        ItemSpec::new(item(WAREHOUSE_YTD), CcClass::R, 0, None),
        ItemSpec::new(item(DISTRICT_YTD), CcClass::R, 0, None),
        ItemSpec::new(
            item(STOCK_QUANTITY),
            CcClass::E,
            1_000_000,
            Some(Constraint::greater_than(0)),
        ),
    ]
}

fn acc(key: &str, intent: Intent) -> Access {
    Access { item: item(key), intent }
}

/// One transaction of the given kind with freshly drawn amounts.
pub fn tpcc_template<R: Rng + ?Sized>(kind: TpccKind, rng: &mut R) -> TxnTemplate {
    use Intent::*;
    let (read_only, accesses) = match kind {
        TpccKind::NewOrder => (
            false,
            vec![
                acc(CUSTOMER, Read),
                acc(CUSTOMER_CREDIT, Read),
                acc(STOCK_QUANTITY, Escrow(-rng.random_range(1..=10))),
            ],
        ),
        TpccKind::Payment => {
            let amount = rng.random_range(1..=5000);
            (
                false,
                vec![
                    acc(CUSTOMER, Read),
                    acc(CUSTOMER_BALANCE, Delta(-amount)),
                    acc(WAREHOUSE_YTD, Delta(amount)),
                    acc(DISTRICT_YTD, Delta(amount)),
                ],
            )
        }
        TpccKind::Delivery => (
            false,
            vec![
                acc(CUSTOMER, Read),
                acc(CUSTOMER_BALANCE, Delta(rng.random_range(1..=5000))),
            ],
        ),
        TpccKind::CreditCheck => (
            false,
            vec![
                acc(CUSTOMER, Read),
                acc(CUSTOMER_CREDIT, Update(1)),
                acc(CUSTOMER_BALANCE, Read),
            ],
        ),
        TpccKind::UpdateStockLevel => (
            false,
            vec![acc(STOCK_QUANTITY, Escrow(rng.random_range(1..=100)))],
        ),
        TpccKind::ReadStockLevel => (true, vec![acc(STOCK_QUANTITY, Read)]),
    };
    TxnTemplate {
        name: kind.name(),
        read_only,
        accesses,
    }
}

/// A shuffled deck with 42/42/4/4/4/4 cards.
pub fn tpcc_deck<R: Rng + ?Sized>(rng: &mut R) -> Vec<TxnTemplate> {
    let mut kinds: Vec<TpccKind> = TpccKind::ALL
        .iter()
        .flat_map(|&k| std::iter::repeat_n(k, k.cards()))
        .collect();
    kinds.shuffle(rng);
    kinds.into_iter().map(|k| tpcc_template(k, rng)).collect()
}

/// Endless template stream: the single template, or deck after deck.
pub struct TemplateSource {
    kind: TemplateKind,
    deck: Vec<TxnTemplate>,
    pos: usize,
}

impl TemplateSource {
    pub fn new(kind: TemplateKind) -> Self {
        Self {
            kind,
            deck: Vec::new(),
            pos: 0,
        }
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TxnTemplate {
        match self.kind {
            TemplateKind::SingleItem => single_item(),
            TemplateKind::TpccDeck => {
                if self.pos == self.deck.len() {
                    self.deck = tpcc_deck(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.deck[self.pos - 1].clone()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn deck_has_the_card_mix() {
        let deck = tpcc_deck(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(deck.len(), 100);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &deck {
            *counts.entry(t.name).or_default() += 1;
            t.validate().unwrap();
        }
        for k in TpccKind::ALL {
            assert_eq!(counts[k.name()], k.cards());
        }
    }

    #[test]
    fn read_stock_level_is_read_only_plain_read() {
        let t = tpcc_template(TpccKind::ReadStockLevel, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(t.read_only);
        assert_eq!(t.accesses, vec![acc(STOCK_QUANTITY, Intent::Read)]);
        assert!(t.writes().is_empty());
    }

    #[test]
    fn same_seed_same_deck() {
        let a = tpcc_deck(&mut ChaCha8Rng::seed_from_u64(4));
        let b = tpcc_deck(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn escrow_becomes_delta_without_escrow() {
        let t = tpcc_template(TpccKind::NewOrder, &mut ChaCha8Rng::seed_from_u64(0)).without_escrow();
        assert!(t.accesses.iter().all(|a| !matches!(a.intent, Intent::Escrow(_))));
        assert_eq!(t.writes().len(), 1);
    }

    #[test]
    fn source_deals_deck_after_deck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = TemplateSource::new(TemplateKind::TpccDeck);
        let dealt: Vec<_> = (0..250).map(|_| s.next(&mut rng)).collect();
        let news = dealt[..200].iter().filter(|t| t.name == "new_order").count();
        assert_eq!(news, 84);
    }

    #[test]
    fn validation_catches_bad_templates() {
        let mut t = single_item();
        t.read_only = true;
        assert!(matches!(t.validate(), Err(TemplateError::ReadOnlyWrites(_))));
        let mut t = single_item();
        t.accesses.push(t.accesses[0].clone());
        assert!(matches!(t.validate(), Err(TemplateError::Repeated(..))));
    }
}
