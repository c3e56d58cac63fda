from .jobs import Job, JobQueue, JobResult, QueueState, WordResult, recover, replay, send_callback
from .log import JobLog, scan
from .pipeline import Pipeline, process_image
from .ratelimit import TokenBucket, rate_limit
from .server import DATA_DIR_ENV, Service, Worker, default_data_dir, handle_request, request, wait_for_server
