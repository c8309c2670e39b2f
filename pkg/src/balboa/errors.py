"""Exception hierarchy shared by every layer of the engine."""


class BalboaError(Exception):
    """Root of all engine errors."""


# packet codec
class PacketError(BalboaError):
    pass


class TruncatedPacket(PacketError):
    pass


class UnknownOpcode(PacketError):
    pass


class NotRoce(PacketError):
    pass


class InvariantViolation(PacketError):
    pass


# icrc
class TooShort(BalboaError):
    pass


# queue pair table
class QpError(BalboaError):
    pass


class TableFull(QpError):
    pass


class DuplicateQpn(QpError):
    pass


class UnknownQpn(QpError):
    pass


# services
class ServiceError(BalboaError):
    pass


class UnknownService(ServiceError):
    pass


class ExpansionRejected(ServiceError):
    pass


class BadLength(ServiceError):
    pass


class NoKey(ServiceError):
    pass


class MisalignedStream(ServiceError):
    pass


class ZeroModulus(ServiceError):
    pass


class UnknownSink(ServiceError):
    pass


# links
class LinkError(BalboaError):
    pass


class Oversized(LinkError):
    pass


class EndpointClosed(LinkError):
    pass


# user api
class ApiError(BalboaError):
    pass


class OobTimeout(ApiError):
    pass


class DescriptorMismatch(ApiError):
    pass


class BoundsError(ApiError):
    pass


class HandleClosed(ApiError):
    pass


class QpFailed(ApiError):
    pass


class CompletionTimeout(ApiError):
    pass


class BenchTimeout(BalboaError):
    pass
