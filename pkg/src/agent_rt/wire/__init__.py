from .protocol import (
    CHUNK, ERR, FRAME_HEIGHT, FRAME_WIDTH, HELLO, JPEG_QUALITY, OBS, REASONING,
    ChunkMessage, DecodeError, EncodeError, ErrorMessage, FrameDecoder, Hello,
    InferenceRequest, ObservationFrame, ProtocolError, Reassembler, ReasoningMessage,
    RemoteError, SeqMismatch, StreamTruncated, decode_body, decode_jpeg,
    detect_chunk_boundary, encode_jpeg, encode_message, stream_chunks,
)
from .transport import (
    ConnectRefused, HandshakeTimeout, MockInferenceServer, Session, SessionClosed,
    TurnResult, open_session,
)
