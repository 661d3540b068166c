"""Scenario loading, world construction, execution and assertions.

A scenario file (.scn) is a JSON document:

    {
      "name": "cross-vasp-direct",
      "route": "2a",                # beneficiary evidence to vasp ASP (2a)
                                    # or the consortium shared ASP (2b)
      "ticks_per_day": 1000,
      "confirm_delay": 2,
      "transfer_cadence_swap_delay": 4,
      "manifests": [{"ref": "model-a", "manufacturer": "acme",
                     "hardware_class": "trusted_hardware"}],
      "vasps": [{"id": "vasp1", "policy": "baseline", "min_loa": 3,
                 "daily_limit": 3000,
                 "jurisdiction": {"name": "a", "info_exchange": true,
                                   "discovery_responses": true}}],
      "wallets": [{"id": "w1", "holder": "alice", "vasp": "vasp1",
                   "manifest": "model-a", "migratable": false,
                   "funds": 10000, "location": [47.0, 8.0, 400.0]}],
      "schedule": [{"tick": 1, "action": "onboard", "wallet": "w1"}, ...],
      "faults": {"drop_submissions": [5], "swap_submissions": [9]},
      "assertions": [{"type": "transfer_confirmed", "from": "w1",
                      "to": "w2", "amount": 100}]
    }

Execution is deterministic for a fixed (scenario, seed); the runner checks
the scenario's assertions plus the always-on plane-separation scan and
returns a ScenarioOutcome.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from . import wire
from .claims import HardwareClass, make_endorsement, sign_manifest
from .crypto import KeyPair, sha256
from .hwemu import build_manifest, create_device
from .netsim import (
    DirectoryEntry,
    LinkPolicy,
    SimWorld,
    VaspActor,
    VerifierActor,
    WalletActor,
)
from .policy import parse_policy
from .vasp import AccountStatus, Jurisdiction, RelyingPartyPolicy, Vasp
from .verifier import Verifier

DEFAULT_DRAIN_TICKS = 120
MAX_EXTRA_TICKS = 2000

_HW_CLASSES = {
    "trusted_hardware": HardwareClass.TRUSTED_HARDWARE,
    "software_only": HardwareClass.SOFTWARE_ONLY,
}


def load_scenario(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def packaged_policy_source(name: str) -> str:
    return (resources.files("walletattest") / "policies" / f"{name}.apl").read_text()


def _policy_source(name: str, policy_dir) -> str:
    if policy_dir is not None:
        candidate = policy_dir / f"{name}.apl"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return packaged_policy_source(name)


@dataclass
class ScenarioOutcome:
    name: str
    seed: int
    world: SimWorld
    ok: bool
    assertion_results: list
    report: dict

    def trace_bytes(self) -> bytes:
        return self.world.trace_bytes()


class ScenarioRun:
    """One built world plus the schedule that drives it."""

    def __init__(self, scenario: dict, seed: int, policy_dir=None):
        self.scenario = scenario
        self.seed = seed
        self.world = SimWorld(
            seed=seed,
            confirm_delay=scenario.get("confirm_delay", 2),
            swap_extra_delay=scenario.get("swap_extra_delay", 4),
        )
        self.wallets: dict[str, WalletActor] = {}
        self.vasps: dict[str, VaspActor] = {}
        self._build(policy_dir)

    # -- construction -------------------------------------------------------

    def _build(self, policy_dir) -> None:
        sc = self.scenario
        world = self.world
        rng = world.rng

        faults = sc.get("faults", {})
        world.ledger.drop_submissions = set(faults.get("drop_submissions", []))
        world.ledger.swap_submissions = set(faults.get("swap_submissions", []))

        manifests = {}
        signed_manifests = []
        endorser_key = KeyPair.from_seed(rng.child("endorser").bytes(32))
        endorser_id = sc.get("endorser_id", "mfr-endorser")
        for m in sc.get("manifests", [{"ref": "model-a", "manufacturer": "acme"}]):
            manifest = build_manifest(
                m["ref"],
                m.get("manufacturer", "acme"),
                _HW_CLASSES[m.get("hardware_class", "trusted_hardware")],
            )
            manifests[manifest.manifest_ref] = manifest
            signed_manifests.append(sign_manifest(manifest, endorser_key, endorser_id))

        ttl = sc.get("nonce_ttl", 100)
        policies = {}

        def _program(name):
            if name not in policies:
                policies[name] = parse_policy(_policy_source(name, policy_dir))
            return policies[name]

        def _setup_verifier(v: Verifier, policy_names):
            v.add_endorser_root(endorser_id, endorser_key.public_bytes)
            for sm in signed_manifests:
                v.register_manifest(sm)
            for name in policy_names:
                v.add_policy(name, _program(name))

        all_policy_names = sorted(
            {v.get("policy", "baseline") for v in sc.get("vasps", [])} | {"baseline"}
        )
        shared = Verifier.create("asp", rng.child("verifier:asp"), ttl=ttl)
        _setup_verifier(shared, all_policy_names)
        world.add_actor(VerifierActor("asp", shared))

        route = sc.get("route", "2a")
        vasp_cfgs = sc.get("vasps", [{"id": "vasp1"}])
        for cfg in vasp_cfgs:
            vid = cfg["id"]
            jur_cfg = cfg.get("jurisdiction", {})
            jurisdiction = Jurisdiction(
                name=jur_cfg.get("name", f"jur-{vid}"),
                info_exchange=jur_cfg.get("info_exchange", True),
                discovery_responses=jur_cfg.get("discovery_responses", True),
            )
            policy = RelyingPartyPolicy(
                min_loa=cfg.get("min_loa", 3),
                daily_limit=cfg.get("daily_limit", 3000),
                preauth_window=cfg.get("preauth_window", 50),
                ticks_per_day=sc.get("ticks_per_day", 1000),
            )
            vasp = Vasp.create(vid, rng.child(f"vasp:{vid}"), jurisdiction, policy)
            verifier = Verifier.create(f"{vid}-asp", rng.child(f"verifier:{vid}"), ttl=ttl)
            policy_name = cfg.get("policy", "baseline")
            _setup_verifier(verifier, [policy_name])
            world.add_actor(VerifierActor(f"{vid}-asp", verifier))
            actor = VaspActor(
                actor_id=vid,
                vasp=vasp,
                verifier=verifier,
                verifier_actor_id=f"{vid}-asp",
                shared_asp_actor_id="asp",
                route=route,
                policy_id=policy_name,
            )
            world.add_actor(actor)
            self.vasps[vid] = actor

        for cfg in vasp_cfgs:
            actor = self.vasps[cfg["id"]]
            actor.directory = [
                DirectoryEntry(
                    actor_id=other.actor_id,
                    vasp_code=other.vasp.vasp_code,
                    transport_public=other.vasp.advertised_transport_key(),
                    info_exchange=other.vasp.jurisdiction.info_exchange,
                    discovery_responses=other.vasp.jurisdiction.discovery_responses,
                )
                for other in self.vasps.values()
                if other is not actor
            ]

        for w in sc.get("wallets", []):
            wid = w["id"]
            device = create_device(
                rng.child(f"wallet:{wid}").bytes(32),
                w.get("manifest", next(iter(manifests))),
                manifests,
            )
            if "location" in w:
                device.set_location(*w["location"])
            handle = device.create_key(device.dik_handle, w.get("migratable", False))
            actor = WalletActor(
                actor_id=wid,
                device=device,
                holder=w.get("holder", wid),
                funds=w.get("funds", 0),
                auth_secret=sha256(b"wallet-auth", wid.encode()),
            )
            actor.handle_id = handle
            actor.vasp_actor = w.get("vasp", vasp_cfgs[0]["id"])
            world.add_actor(actor)
            self.wallets[wid] = actor
            endorsement = make_endorsement(
                endorser_key,
                endorser_id,
                device.public_identity(),
                device.manifest_ref,
                manifests,
            )
            shared.register_endorsement(endorsement)
            for vactor in self.vasps.values():
                vactor.verifier.register_endorsement(endorsement)

        for link in sc.get("links", []):
            world.set_link(
                link.get("src", "*"),
                link.get("dst", "*"),
                LinkPolicy(
                    delay=link.get("delay", 1),
                    drop_prob=link.get("drop_prob", 0.0),
                    reorder=link.get("reorder", False),
                ),
            )

    # -- schedule ------------------------------------------------------------

    def _fire(self, item: dict) -> None:
        action = item["action"]
        if action == "onboard":
            wallet = self.wallets[item["wallet"]]
            self.vasps[wallet.vasp_actor].do_onboard(wallet)
        elif action == "transfer":
            src = self.wallets[item["from"]]
            if "to_external" in item:
                beneficiary = bytes.fromhex(item["to_external"])
            else:
                beneficiary = self.wallets[item["to"]].public_key()
            src.start_transfer(beneficiary, item["amount"])
        elif action == "offboard":
            wallet = self.wallets[item["wallet"]]
            self.vasps[wallet.vasp_actor].do_offboard(wallet, item.get("cooperate", True))
        elif action == "reconcile":
            self.vasps[item["vasp"]].do_reconcile()
        elif action == "set_location":
            self.wallets[item["wallet"]].device.set_location(*item["location"])
        elif action == "install_component":
            self.wallets[item["wallet"]].device.install_component(item["component"])
        else:
            raise ValueError(f"unknown scenario action {action!r}")

    def _tick(self, schedule: list, state: dict) -> None:
        # actions fire at the top of their tick, before message delivery
        self.world.begin_tick()
        while (
            state["idx"] < len(schedule)
            and schedule[state["idx"]]["tick"] <= self.world.clock
        ):
            self._fire(schedule[state["idx"]])
            state["idx"] += 1
        self.world.finish_tick()

    def run(self) -> ScenarioOutcome:
        sc = self.scenario
        schedule = sorted(sc.get("schedule", []), key=lambda i: (i["tick"],))
        last_tick = max((i["tick"] for i in schedule), default=0)
        budget = last_tick + sc.get("drain_ticks", DEFAULT_DRAIN_TICKS)

        state = {"idx": 0}
        while self.world.clock < budget:
            self._tick(schedule, state)
        extra = 0
        while not self.world.idle() and extra < MAX_EXTRA_TICKS:
            self._tick(schedule, state)
            extra += 1
        live = self.world.idle()
        if not live:
            self.world.record("world", "liveness", "queue not drained within budget")

        scan_ok, scan_detail = self._plane_separation_scan()
        results = [
            {
                "assertion": {"type": "plane_separation"},
                "ok": scan_ok,
                "detail": scan_detail,
            },
            {
                "assertion": {"type": "liveness"},
                "ok": live,
                "detail": "drained" if live else "undelivered messages remain",
            },
        ]
        for spec_item in sc.get("assertions", []):
            ok, detail = self._check(spec_item)
            results.append({"assertion": spec_item, "ok": ok, "detail": detail})
        overall = all(r["ok"] for r in results)
        report = self._report(results, overall)
        return ScenarioOutcome(
            name=sc.get("name", "scenario"),
            seed=self.seed,
            world=self.world,
            ok=overall,
            assertion_results=results,
            report=report,
        )

    # -- checks -------------------------------------------------------------------

    def _plane_separation_scan(self) -> tuple[bool, str]:
        needles = []
        parties = []
        for vactor in self.vasps.values():
            parties.extend(vactor.vasp.exchanged_parties)
            for record in vactor.vasp.records.values():
                parties.extend((record.originator, record.beneficiary))
        for party in parties:
            if len(party.name) >= 3:
                needles.append(party.name.encode())
            if party.vaan:
                needles.append(party.vaan.to_bytes(8, "big"))
        payloads = [wire.encode(tx) for tx in self.world.ledger.confirmed]
        for needle in needles:
            for payload in payloads:
                if needle in payload:
                    return False, f"customer data {needle.hex()} found in ledger payload"
        return True, f"scanned {len(payloads)} payloads against {len(needles)} needles"

    def _check(self, a: dict) -> tuple[bool, str]:
        t = a["type"]
        if t == "account_active" or t == "account_offboarded":
            wallet = self.wallets[a["wallet"]]
            vactor = self.vasps[wallet.vasp_actor]
            account = vactor.vasp.accounts.get(wallet.vaan)
            if account is None:
                return False, "no account"
            want = AccountStatus.ACTIVE if t == "account_active" else AccountStatus.OFF_BOARDED
            return account.status is want, f"status={account.status.value}"
        if t == "transfer_confirmed" or t == "no_transfer":
            src = self.wallets[a["from"]].public_key()
            dst = (
                bytes.fromhex(a["to_external"])
                if "to_external" in a
                else self.wallets[a["to"]].public_key()
            )
            found = [
                tx
                for tx in self.world.ledger.confirmed
                if tx.from_key == src
                and tx.to_key == dst
                and ("amount" not in a or tx.amount == a["amount"])
            ]
            if t == "transfer_confirmed":
                return bool(found), f"{len(found)} matching confirmed transfers"
            return not found, f"{len(found)} matching confirmed transfers"
        if t == "balance_at_least":
            key = self.wallets[a["wallet"]].public_key()
            bal = self.world.ledger.balance(key)
            return bal >= a["amount"], f"balance={bal}"
        if t == "decision":
            wallet = self.wallets[a["wallet"]]
            if not wallet.decisions:
                return False, "no decisions received"
            d = wallet.decisions[a.get("index", -1)]
            return d.approved == a["approved"], f"approved={d.approved} reason={d.reason}"
        if t == "reconcile_counts":
            vactor = self.vasps[a["vasp"]]
            if not vactor.reconcile_reports:
                return False, "no reconcile report"
            r = vactor.reconcile_reports[-1]
            got = (
                len(r.ledger_missing_record),
                len(r.records_unconfirmed),
                len(r.order_divergences),
            )
            want = (a["missing_records"], a["unconfirmed"], a["divergences"])
            return got == want, f"(missing,unconfirmed,divergences)={got} want {want}"
        if t == "all_records_verified":
            vactor = self.vasps[a["vasp"]]
            from .claims import TravelRuleStatus

            bad = [
                d.hex()[:12]
                for d, rec in vactor.vasp.records.items()
                if rec.status is not TravelRuleStatus.VERIFIED
            ]
            return not bad, f"non-verified records: {bad}"
        raise ValueError(f"unknown assertion type {t!r}")

    def _report(self, results, overall) -> dict:
        ledger = self.world.ledger
        balances = {k.hex(): v for k, v in sorted(ledger.balances.items())}
        decisions = {
            vid: list(actor.decisions) for vid, actor in sorted(self.vasps.items())
        }
        loa_by_wallet = {}
        for wid, wallet in sorted(self.wallets.items()):
            vactor = self.vasps.get(wallet.vasp_actor)
            if vactor is None:
                continue
            account = vactor.vasp.accounts.get(wallet.vaan)
            if account and account.last_result:
                loa_by_wallet[wid] = account.last_result.loa
        return {
            "name": self.scenario.get("name", "scenario"),
            "seed": self.seed,
            "ticks": self.world.clock,
            "events": len(self.world.trace),
            "confirmed_transfers": len(ledger.confirmed),
            "dropped_submissions": len(ledger.dropped_digests),
            "balances": balances,
            "decisions": decisions,
            "wallet_loa": loa_by_wallet,
            "ok": overall,
            "assertions": results,
        }


def run_scenario(scenario: dict, seed: int, policy_dir=None) -> ScenarioOutcome:
    return ScenarioRun(scenario, seed, policy_dir=policy_dir).run()


# --- canonical scenario constructors ---------------------------------------------


def cross_vasp_scenario(route: str = "2a", beneficiary_software_only: bool = False) -> dict:
    """Three member VASPs plus a shared ASP; originator at vasp1 transfers
    directly to a beneficiary at vasp2 after both wallets are appraised."""
    manifests = [
        {"ref": "model-a", "manufacturer": "acme", "hardware_class": "trusted_hardware"},
        {"ref": "model-s", "manufacturer": "acme", "hardware_class": "software_only"},
    ]
    bene_manifest = "model-s" if beneficiary_software_only else "model-a"
    return {
        "name": f"cross-vasp-{route}",
        "route": route,
        "manifests": manifests,
        "vasps": [
            {"id": "vasp1", "min_loa": 3},
            {"id": "vasp2", "min_loa": 3},
            {"id": "vasp3", "min_loa": 3},
        ],
        "wallets": [
            {"id": "w1", "holder": "alice", "vasp": "vasp1", "manifest": "model-a", "funds": 5000},
            {"id": "w2", "holder": "bob", "vasp": "vasp2", "manifest": bene_manifest},
            {"id": "w3", "holder": "carol", "vasp": "vasp3", "manifest": "model-a"},
        ],
        "schedule": [
            {"tick": 1, "action": "onboard", "wallet": "w1"},
            {"tick": 2, "action": "onboard", "wallet": "w2"},
            {"tick": 3, "action": "onboard", "wallet": "w3"},
            {"tick": 6, "action": "transfer", "from": "w1", "to": "w2", "amount": 100},
        ],
        "assertions": (
            [
                {"type": "decision", "wallet": "w1", "approved": False},
                {"type": "no_transfer", "from": "w1", "to": "w2"},
            ]
            if beneficiary_software_only
            else [
                {"type": "decision", "wallet": "w1", "approved": True},
                {"type": "transfer_confirmed", "from": "w1", "to": "w2", "amount": 100},
                {"type": "all_records_verified", "vasp": "vasp1"},
            ]
        ),
    }


def run_cross_vasp_scenario(config: dict | None = None, seed: int = 7) -> ScenarioOutcome:
    """Execute the cross-VASP appraisal flow and return its report."""
    return run_scenario(config or cross_vasp_scenario(), seed)


def travel_rule_sync_scenario(
    n_transfers: int = 50,
    drop_submissions: tuple = (5, 23),
    swap_submissions: tuple = (9, 31, 44),
    cadence: int = 3,
) -> dict:
    """Intra-VASP stream of direct transfers with scripted ledger faults.

    Dropped submissions leave Travel Rule records without confirmations;
    swapped submissions invert signing order vs confirmation order.
    """
    start = 8
    schedule = [
        {"tick": 1, "action": "onboard", "wallet": "w1"},
        {"tick": 2, "action": "onboard", "wallet": "w2"},
    ]
    for i in range(n_transfers):
        schedule.append(
            {
                "tick": start + cadence * i,
                "action": "transfer",
                "from": "w1",
                "to": "w2",
                "amount": 10,
            }
        )
    reconcile_tick = start + cadence * n_transfers + 60
    schedule.append({"tick": reconcile_tick, "action": "reconcile", "vasp": "vasp1"})
    return {
        "name": "travel-rule-sync",
        "ticks_per_day": 100000,
        "swap_extra_delay": cadence + 1,
        "manifests": [
            {"ref": "model-a", "manufacturer": "acme", "hardware_class": "trusted_hardware"}
        ],
        "vasps": [{"id": "vasp1", "min_loa": 3, "daily_limit": max(3000, 10 * n_transfers + 10)}],
        "wallets": [
            {"id": "w1", "holder": "alice", "vasp": "vasp1", "manifest": "model-a", "funds": 10 * n_transfers + 100},
            {"id": "w2", "holder": "bob", "vasp": "vasp1", "manifest": "model-a"},
        ],
        "schedule": schedule,
        "faults": {
            "drop_submissions": list(drop_submissions),
            "swap_submissions": list(swap_submissions),
        },
        "assertions": [
            {
                "type": "reconcile_counts",
                "vasp": "vasp1",
                "missing_records": 0,
                "unconfirmed": len(drop_submissions),
                "divergences": len(swap_submissions),
            }
        ],
    }


def onboarding_scenario() -> dict:
    return {
        "name": "onboarding",
        "manifests": [
            {"ref": "model-a", "manufacturer": "acme", "hardware_class": "trusted_hardware"}
        ],
        "vasps": [{"id": "vasp1", "min_loa": 3}],
        "wallets": [
            {"id": "w1", "holder": "alice", "vasp": "vasp1", "manifest": "model-a", "funds": 1000},
            {"id": "w2", "holder": "bob", "vasp": "vasp1", "manifest": "model-a"},
        ],
        "schedule": [
            {"tick": 1, "action": "onboard", "wallet": "w1"},
            {"tick": 2, "action": "onboard", "wallet": "w2"},
            {"tick": 6, "action": "transfer", "from": "w1", "to": "w2", "amount": 250},
            {"tick": 30, "action": "offboard", "wallet": "w2"},
            {"tick": 40, "action": "reconcile", "vasp": "vasp1"},
        ],
        "assertions": [
            {"type": "account_active", "wallet": "w1"},
            {"type": "account_offboarded", "wallet": "w2"},
            {"type": "transfer_confirmed", "from": "w1", "to": "w2", "amount": 250},
            {"type": "balance_at_least", "wallet": "w2", "amount": 250},
        ],
    }
