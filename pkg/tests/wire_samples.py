"""Deterministic sample messages backing the wire golden vectors."""

from fixrt.handle import EncodeStyle, Laziness, blob_handle, retag, tree_handle
from fixrt.net import (
    Delegate,
    FailureMsg,
    Hello,
    NotFoundMsg,
    Propose,
    Push,
    Request,
    ResultMsg,
    StatsReply,
    StatsRequest,
)

LIT = blob_handle(b"hello")
BIG_PAYLOAD = b"x" * 40
BIG = blob_handle(BIG_PAYLOAD)
TREE = tree_handle([LIT, BIG])
TREE_PAYLOAD = LIT.raw + BIG.raw
THUNK = retag(TREE, laziness=Laziness.APPLICATION)


def sample_messages() -> dict:
    return {
        "hello": Hello(0x0102030405060708, (BIG, TREE)),
        "push": Push(BIG, BIG_PAYLOAD),
        "propose": Propose((BIG, TREE)),
        "request": Request(BIG),
        "not_found": NotFoundMsg(BIG),
        "delegate": Delegate(THUNK, EncodeStyle.STRICT,
                             ((TREE, TREE_PAYLOAD), (BIG, BIG_PAYLOAD))),
        "result": ResultMsg(THUNK, EncodeStyle.STRICT, LIT, ()),
        "failure": FailureMsg(THUNK, EncodeStyle.SHALLOW, "boom"),
        "stats_request": StatsRequest(),
        "stats_reply": StatsReply({"bytes_network": 123456, "guest_invocations": 7}),
    }
