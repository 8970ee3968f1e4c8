use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codec::ControlParameter;
use crate::error::{Error, Result};
use crate::link::{required_bandwidth_mhz, spectral_efficiency, CodeRate, LinkParams, QosTier};

/// One connected user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: u64,
    pub theta: ControlParameter,
    /// Channel conditions plus the code rate in use.
    pub link: LinkParams,
    pub tier: QosTier,
    pub allocated_mhz: f64,
    /// Bits per sample the allocation was sized for.
    pub measured_bits: f64,
}

impl UserRecord {
    pub fn new(user_id: u64, theta: ControlParameter, link: LinkParams, tier: QosTier, measured_bits: f64) -> Result<Self> {
        Ok(Self {
            user_id,
            theta,
            link,
            tier,
            allocated_mhz: required_bandwidth_mhz(measured_bits, &link)?,
            measured_bits,
        })
    }
}

/// Bandwidth ledger: total budget and per-user allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    total_bandwidth_mhz: f64,
    users: Vec<UserRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UserRow {
    user_id: u64,
    r: usize,
    q: u8,
    code_rate: CodeRate,
    allocated_mhz: f64,
    snr_db: f64,
    delay_ms: f64,
    tier: QosTier,
}

impl SystemState {
    pub fn new(total_bandwidth_mhz: f64) -> Result<Self> {
        if !(total_bandwidth_mhz > 0.0) || !total_bandwidth_mhz.is_finite() {
            return Err(Error::invalid(format!(
                "total bandwidth {total_bandwidth_mhz} MHz must be positive"
            )));
        }
        Ok(Self {
            total_bandwidth_mhz,
            users: Vec::new(),
        })
    }

    pub fn total_bandwidth_mhz(&self) -> f64 {
        self.total_bandwidth_mhz
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub(crate) fn users_mut(&mut self) -> &mut [UserRecord] {
        &mut self.users
    }

    pub fn allocated_mhz(&self) -> f64 {
        self.users.iter().map(|u| u.allocated_mhz).sum()
    }

    pub fn idle_bandwidth_mhz(&self) -> f64 {
        (self.total_bandwidth_mhz - self.allocated_mhz()).max(0.0)
    }

    pub fn utilization(&self) -> f64 {
        self.allocated_mhz() / self.total_bandwidth_mhz
    }

    /// Appends a user if its allocation fits into idle bandwidth.
    pub fn commit(&mut self, user: UserRecord) -> Result<()> {
        let idle = self.idle_bandwidth_mhz();
        if user.allocated_mhz > idle {
            return Err(Error::invalid(format!(
                "allocation {} MHz exceeds idle {idle} MHz",
                user.allocated_mhz
            )));
        }
        if self.users.iter().any(|u| u.user_id == user.user_id) {
            return Err(Error::invalid(format!("user {} already connected", user.user_id)));
        }
        self.users.push(user);
        Ok(())
    }

    /// Writes the `user_id,r,q,code_rate,allocated_mhz,snr_db,delay_ms,tier`
    /// table.
    pub fn write_users_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        if self.users.is_empty() {
            wtr.write_record(["user_id", "r", "q", "code_rate", "allocated_mhz", "snr_db", "delay_ms", "tier"])?;
        }
        for u in &self.users {
            wtr.serialize(UserRow {
                user_id: u.user_id,
                r: u.theta.rank(),
                q: u.theta.qbits(),
                code_rate: u.link.code_rate,
                allocated_mhz: u.allocated_mhz,
                snr_db: u.link.snr_db,
                delay_ms: u.link.delay_budget_s * 1e3,
                tier: u.tier,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Restores a ledger from the users table. Bits per sample are recovered
    /// by inverting the bandwidth formula.
    pub fn read_users_csv<R: Read>(total_bandwidth_mhz: f64, r: R) -> Result<Self> {
        let mut state = Self::new(total_bandwidth_mhz)?;
        let mut rdr = csv::Reader::from_reader(r);
        for row in rdr.deserialize::<UserRow>() {
            let row = row.map_err(|e| Error::invalid(format!("users csv: {e}")))?;
            let link = LinkParams {
                snr_db: row.snr_db,
                code_rate: row.code_rate,
                delay_budget_s: row.delay_ms * 1e-3,
            };
            let bits = row.allocated_mhz * 1e6 * spectral_efficiency(link.snr_db) * link.delay_budget_s * link.code_rate.value();
            state.users.push(UserRecord {
                user_id: row.user_id,
                theta: ControlParameter::new(row.r, row.q)?,
                link,
                tier: row.tier,
                allocated_mhz: row.allocated_mhz,
                measured_bits: bits,
            });
        }
        if state.allocated_mhz() > total_bandwidth_mhz + 1e-9 {
            return Err(Error::invalid("users table exceeds the bandwidth budget"));
        }
        Ok(state)
    }
}
