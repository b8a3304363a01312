"""
Exception hierarchy shared by the pipeline stages
"""


class OmpRagError(Exception):
    """
    Base class for all errors raised by omp_rag.
    """
    pass


class InvalidInputError(OmpRagError):
    """
    Operation called with input that violates its precondition.
    """
    pass


class IntegrityError(OmpRagError):
    """
    Artifacts that should agree with each other do not.
    """
    pass


class ProviderError(OmpRagError):
    """
    Remote embedding or chat provider failed.

    :param message: error text
    :param status: HTTP status of the last response, None for transport
                   failures that produced no response
    """

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ReplayMissError(OmpRagError):
    """
    Replay store has no record for the request.
    """

    def __init__(self, message, case_id=None):
        super().__init__(message)
        self.case_id = case_id


class HostEnvironmentError(OmpRagError):
    """
    The host cannot run the requested stage. Aborts a pipeline run.
    """
    pass


class ToolchainError(HostEnvironmentError):
    """
    Compiler binary (or another external tool) is missing.
    """
    pass
