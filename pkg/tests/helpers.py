"""World builders shared by the tests."""

from __future__ import annotations

from compress_store import codec
from compress_store.consensus import FullNode, MiningParams, StorageDirectory, make_transaction, mine
from compress_store.crypto import KeyPair, derive_seed
from compress_store.ledger import genesis_block
from compress_store.storage import CreditLedger, StorageNode

READER_KEY = derive_seed("test-reader")
CONTENT_KEY = derive_seed("test-content")

# one "PASS|FAIL <criterion>: <detail>" line per acceptance check, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def small_video(n_gops=5, size=16, gop_size=5, seed=7):
    return codec.generate_synthetic_video(size, size, n_gops, gop_size, seed)


def make_world(n_nodes=2, credits=1 << 24, capacity=1 << 26):
    ledger = CreditLedger()
    ledger.grant("miner-0", credits)
    nodes = [StorageNode(f"storage-{i}", capacity) for i in range(n_nodes)]
    return StorageDirectory(nodes, ledger)


def make_txs(gops, video_id="video-0", initiator=None):
    initiator = initiator or KeyPair.derive("test-initiator")
    return [make_transaction(g, video_id, initiator, CONTENT_KEY, READER_KEY, b"sensor") for g in gops]


class Mined:
    """An honest world: one mined block on genesis plus a verifier that has all raw GOPs."""

    def __init__(self, n_gops=5, threshold=30.0, challenge_k=4):
        self.gops = small_video(n_gops)
        self.txs = make_txs(self.gops)
        self.directory = make_world()
        self.params = MiningParams(5, (64, 32, 16, 8, 4, 2, 1), threshold, challenge_k)
        self.miner_keys = KeyPair.derive("test-miner")
        self.result = mine(self.txs, self.params, "miner-0", self.miner_keys, READER_KEY, self.directory,
                           genesis_block())
        self.block = self.result.block

    def verifier(self, name="verifier-0"):
        node = FullNode(name, READER_KEY, self.directory, self.params)
        for tx in self.txs:
            node.add_transaction(tx)
        return node
