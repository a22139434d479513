"""Protocol message types shared by every module.

Identifiers: client ids are small integers, replica/node ids and group ids are
strings ("A0".."A3" for the agreement group, "E0.1" = replica 1 of execution
group "E0", "c5" = the node hosting client 5).  The agreement group id is the
distinguished constant AGREEMENT_GROUP.
"""

from __future__ import annotations

from .wire import message

AGREEMENT_GROUP = "A"

# Request kinds
WRITE = 0
STRONG_READ = 1
WEAK_READ = 2
ADMIN = 3  # AddGroup/RemoveGroup; ordered and distributed exactly like a write

ORDERED_KINDS = (WRITE, STRONG_READ, ADMIN)


@message(0x11)
class Request:
    c: int
    t_c: int
    kind: int
    op: bytes
    target_group: str
    s_min: int  # sequential-consistency floor; meaningful for weak reads
    sig: bytes  # client signature over the request content (empty for weak reads)


@message(0x12)
class Reply:
    c: int
    t_c: int
    result: bytes
    s_write: int   # position where the op took effect (writes / strong reads)
    s_update: int  # latest influencing state change (weak reads)
    replica: str


@message(0x13)
class ExecEntryFull:
    request: Request


@message(0x14)
class ExecEntryHash:
    c: int
    t_c: int
    op_hash: bytes


@message(0x15)
class ExecuteMsg:
    s: int
    entries: list  # ExecEntryFull | ExecEntryHash; empty for no-op slots


# ---------------------------------------------------------------------------
# IRMC wire messages

@message(0x20)
class SendMsg:
    channel: str
    sc: int
    pos: int
    payload: bytes
    signer: str


@message(0x21)
class MoveMsg:
    channel: str
    sc: int
    pos: int
    collector: str  # SC receivers announce their collector choice; "" otherwise
    signer: str


@message(0x22)
class ShareMsg:
    channel: str
    sc: int
    pos: int
    digest: bytes
    signer: str
    sig: bytes  # over the digest tuple; becomes a certificate voucher


@message(0x23)
class CertificateMsg:
    channel: str
    sc: int
    pos: int
    payload: bytes
    vouchers: list  # [(signer, sig), ...] f_s+1 distinct signers
    signer: str


@message(0x24)
class ProgressMsg:
    channel: str
    positions: list  # [(sc, highest certified pos), ...]
    signer: str


@message(0x25)
class DirectSig:
    sig: bytes


@message(0x26)
class MerkleProof:
    mc: int
    i: int
    path: list  # sibling hashes, leaf to root
    sig: bytes  # over the root


@message(0x27)
class AuthedMsg:
    body: bytes  # encoded SendMsg / MoveMsg / CertificateMsg / ProgressMsg
    auth: object  # DirectSig | MerkleProof


# ---------------------------------------------------------------------------
# Agreement-group internals (PBFT + proof of transfer + checkpoints)

@message(0x30)
class PrePrepare:
    view: int
    s: int
    noop: bool
    batch: list  # [Request, ...]
    signer: str


@message(0x31)
class Prepare:
    view: int
    s: int
    digest: bytes
    signer: str


@message(0x32)
class Commit:
    view: int
    s: int
    digest: bytes
    signer: str


@message(0x33)
class ViewChange:
    new_view: int
    last_delivered: int
    prepared: list  # [(s, view, noop, batch), ...] slots prepared locally
    signer: str
    sig: bytes


@message(0x34)
class NewView:
    view: int
    view_changes: list  # the ViewChange messages justifying this view
    pre_prepares: list  # [PrePrepare, ...] re-proposals incl. no-op fillers
    signer: str
    sig: bytes


@message(0x3B)
class ForwardRequest:
    request: Request  # follower hands a pending request to the current leader
    signer: str


@message(0x35)
class VerifyMsg:
    descriptors: list  # [(c, t_c, request hash), ...]
    signer: str


@message(0x36)
class CheckpointVote:
    group: str
    s: int
    digest: bytes
    signer: str
    sig: bytes


@message(0x37)
class FetchCheckpoint:
    group: str
    min_s: int
    requester: str


@message(0x38)
class CheckpointData:
    group: str
    s: int
    snapshot: bytes  # encoded AgreementSnapshot / ExecSnapshot
    votes: list  # [(signer, sig), ...]


@message(0x39)
class AgreementSnapshot:
    s: int
    t: list      # [(c, latest agreed t_c), ...]
    tplus: list  # [(c, next request-fetch position), ...]
    hist: list   # [(s, noop, batch), ...] most recent slots, commit capacity many


@message(0x3A)
class ExecSnapshot:
    s: int
    app_state: bytes
    u: list  # [(c, Reply), ...]


# ---------------------------------------------------------------------------
# Registry / admin

@message(0x40)
class AddGroup:
    group: str
    members: list  # [(replica id, region), ...]


@message(0x41)
class RemoveGroup:
    group: str


@message(0x42)
class RegistryQuery:
    c: int
    nonce: int


@message(0x43)
class RegistryReply:
    nonce: int
    groups: list  # [(group, region, [replica ids...]), ...]
    signer: str


# ---------------------------------------------------------------------------
# Commit-channel receiver gossip (weak-read availability optimization)

@message(0x50)
class StatusMsg:
    channel: str
    positions: list  # [(sc, contiguous delivered pos), ...]
    signer: str


@message(0x51)
class EvidenceMsg:
    channel: str
    sc: int
    pos: int
    evidence: list  # encoded AuthedMsg items proving delivery of the slot
    signer: str


# ---------------------------------------------------------------------------
# Transport envelope; the MAC field is empty where signatures authenticate.

@message(0x60)
class Envelope:
    sender: str
    body: bytes
    mac: bytes
