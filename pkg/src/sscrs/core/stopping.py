class Stoppable:
    """
    Interface for long-running jobs (training, evaluation, gradient checks) that can be
    interrupted between steps.
    """

    def stop_execution(self):
        """
        Requests the job to stop after the current step.
        """
        raise NotImplementedError()

    @property
    def is_stopped(self) -> bool:
        """
        Returns whether a stop was requested.

        :return: true if stopped
        :rtype: bool
        """
        raise NotImplementedError()
