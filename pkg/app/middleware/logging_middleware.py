# app/middleware/logging_middleware.py
import time
import uuid
import logging

from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware, RequestResponseEndpoint

logger = logging.getLogger(__name__)


class LoggingMiddleware(BaseHTTPMiddleware):
    async def dispatch(
        self, request: Request, call_next: RequestResponseEndpoint
    ) -> Response:
        """
        Logs one line per request and tags the response with its run id so a
        result can be matched to its log entry.
        """
        run_id = uuid.uuid4().hex
        request.state.run_id = run_id
        start_time = time.time()

        response = await call_next(request)

        process_time_ms = (time.time() - start_time) * 1000
        client_ip = request.client.host if request.client else "unknown"

        log_message = (
            f"method={request.method} "
            f"path='{request.url.path}' "
            f"status_code={response.status_code} "
            f"run_id='{run_id}' "
            f"client_ip='{client_ip}' "
            f"latency_ms={process_time_ms:.2f}"
        )
        logger.info(log_message)

        response.headers["X-Run-Id"] = run_id
        return response
